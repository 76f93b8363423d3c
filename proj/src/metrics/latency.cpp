#include "itst/metrics/latency.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>

#include "itst/errors.hpp"

namespace itst::metrics {

namespace {

void require_valid(const ReadWriteTrace& t) {
  t.validate();
  if (t.g.empty()) throw FormatError("trace has no target tokens");
}

}  // namespace

double cw(const ReadWriteTrace& t) {
  require_valid(t);
  std::size_t prev = 0;
  double total = 0.0;
  std::size_t waits = 0;
  for (std::size_t gi : t.g) {
    total += static_cast<double>(gi - prev);
    if (gi > prev) ++waits;
    prev = gi;
  }
  if (waits == 0) throw std::domain_error("cw: no positive increments");
  return total / static_cast<double>(waits);
}

double ap(const ReadWriteTrace& t) {
  require_valid(t);
  double total = 0.0;
  for (std::size_t gi : t.g) total += static_cast<double>(gi);
  return total / (static_cast<double>(t.src_len) * static_cast<double>(t.tgt_len));
}

double al(const ReadWriteTrace& t) {
  require_valid(t);
  const double rate = static_cast<double>(t.tgt_len) / static_cast<double>(t.src_len);
  double total = 0.0;
  for (std::size_t i = 0; i < t.g.size(); ++i) {
    total += static_cast<double>(t.g[i]) - static_cast<double>(i) / rate;
    if (t.g[i] == t.src_len) return total / static_cast<double>(i + 1);
  }
  throw TraceIncompleteError("al: trace never reaches the full source (" +
                             std::to_string(t.src_len) + " tokens)");
}

double dal(const ReadWriteTrace& t) {
  require_valid(t);
  const double x = static_cast<double>(t.src_len);
  const double y = static_cast<double>(t.tgt_len);
  double total = 0.0;
  double prev = 0.0;
  for (std::size_t i = 0; i < t.g.size(); ++i) {
    const double gi = static_cast<double>(t.g[i]);
    const double gp = i == 0 ? gi : std::max(gi, prev + x / y);
    total += gp - static_cast<double>(i) / (x / y);
    prev = gp;
  }
  return total / y;
}

LatencyReport evaluate(const ReadWriteTrace& t) { return {cw(t), ap(t), al(t), dal(t)}; }

std::optional<double> aligned_proportion(const ReadWriteTrace& t, const corpus::Alignment& a) {
  t.validate();
  std::size_t aligned = 0, hit = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 0) continue;
    if (i >= t.g.size()) {
      throw IndexError("alignment target position " + std::to_string(i + 1) +
                       " beyond trace length " + std::to_string(t.g.size()));
    }
    if (a[i] > t.src_len) {
      throw IndexError("aligned source index " + std::to_string(a[i]) + " beyond source length " +
                       std::to_string(t.src_len));
    }
    ++aligned;
    if (a[i] <= t.g[i]) ++hit;
  }
  if (aligned == 0) return std::nullopt;
  return static_cast<double>(hit) / static_cast<double>(aligned);
}

double aligned_proportion(std::span<const ReadWriteTrace> traces,
                          std::span<const corpus::Alignment> alignments) {
  if (traces.size() != alignments.size()) {
    throw DimensionError("aligned_proportion: " + std::to_string(traces.size()) + " traces vs " +
                         std::to_string(alignments.size()) + " alignments");
  }
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t s = 0; s < traces.size(); ++s) {
    if (auto p = aligned_proportion(traces[s], alignments[s])) {
      total += *p;
      ++n;
    }
  }
  if (n == 0) throw std::domain_error("aligned_proportion: no aligned target tokens");
  return total / static_cast<double>(n);
}

CorpusReport evaluate_corpus(std::span<const ReadWriteTrace> traces,
                             std::span<const corpus::Alignment> alignments) {
  CorpusReport r;
  if (!alignments.empty() && alignments.size() != traces.size()) {
    throw DimensionError("evaluate_corpus: " + std::to_string(traces.size()) + " traces vs " +
                         std::to_string(alignments.size()) + " alignments");
  }
  for (const auto& t : traces) r.sentences.push_back(evaluate(t));
  if (!r.sentences.empty()) {
    for (const auto& s : r.sentences) {
      r.mean.cw += s.cw;
      r.mean.ap += s.ap;
      r.mean.al += s.al;
      r.mean.dal += s.dal;
    }
    const double n = static_cast<double>(r.sentences.size());
    r.mean.cw /= n;
    r.mean.ap /= n;
    r.mean.al /= n;
    r.mean.dal /= n;
  }
  if (!alignments.empty()) {
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t s = 0; s < traces.size(); ++s) {
      r.aligned.push_back(aligned_proportion(traces[s], alignments[s]));
      if (r.aligned.back()) {
        total += *r.aligned.back();
        ++n;
      }
    }
    if (n > 0) r.mean_aligned = total / static_cast<double>(n);
  }
  return r;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_csv(std::ostream& out, std::span<const ReadWriteTrace> traces,
               const CorpusReport& report) {
  const bool with_align = !report.aligned.empty();
  out << "sentence_id,cw,ap,al,dal";
  if (with_align) out << ",aligned_proportion";
  out << '\n';
  for (std::size_t s = 0; s < report.sentences.size(); ++s) {
    const auto& r = report.sentences[s];
    out << (traces[s].sentence_id ? *traces[s].sentence_id : s) << ',' << fmt(r.cw) << ','
        << fmt(r.ap) << ',' << fmt(r.al) << ',' << fmt(r.dal);
    if (with_align) out << ',' << (report.aligned[s] ? fmt(*report.aligned[s]) : "");
    out << '\n';
  }
  out << "mean," << fmt(report.mean.cw) << ',' << fmt(report.mean.ap) << ','
      << fmt(report.mean.al) << ',' << fmt(report.mean.dal);
  if (with_align) out << ',' << (report.mean_aligned ? fmt(*report.mean_aligned) : "");
  out << '\n';
}

}  // namespace itst::metrics
