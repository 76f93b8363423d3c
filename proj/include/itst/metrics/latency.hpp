#pragma once
// Latency metrics over read/write traces and the aligned-proportion measure of
// policy quality.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "itst/corpus/corpus.hpp"
#include "itst/policy/trace.hpp"

namespace itst::metrics {

using policy::ReadWriteTrace;

struct LatencyReport {
  double cw = 0.0;
  double ap = 0.0;
  double al = 0.0;
  double dal = 0.0;
};

/// Consecutive wait: sum_i (g_i - g_{i-1}) / #{i : g_i > g_{i-1}}, g_0 = 0.
double cw(const ReadWriteTrace& t);
/// Average proportion: sum_i g_i / (|x| |y|).
double ap(const ReadWriteTrace& t);
/// Average lagging up to tau, the first i with g_i = |x|; each term is
/// g_i - (i - 1) / (|y| / |x|). Throws TraceIncompleteError if no such i.
double al(const ReadWriteTrace& t);
/// Differentiable average lagging with g'_i = max(g_i, g'_{i-1} + |x|/|y|);
/// each term is g'_i - (i - 1) / (|x| / |y|).
double dal(const ReadWriteTrace& t);

LatencyReport evaluate(const ReadWriteTrace& t);

/// Fraction of aligned target positions i with a_i <= g_i. Positions with no
/// alignment (0) are skipped; returns nullopt when none are aligned.
std::optional<double> aligned_proportion(const ReadWriteTrace& t, const corpus::Alignment& a);

/// Corpus mean of per-sentence aligned proportions. Throws DimensionError on a
/// count mismatch and IndexError on alignments outside the trace.
double aligned_proportion(std::span<const ReadWriteTrace> traces,
                          std::span<const corpus::Alignment> alignments);

struct CorpusReport {
  std::vector<LatencyReport> sentences;
  LatencyReport mean;
  std::vector<std::optional<double>> aligned;  // empty unless alignments given
  std::optional<double> mean_aligned;
};

/// Unweighted means over sentences.
CorpusReport evaluate_corpus(std::span<const ReadWriteTrace> traces,
                             std::span<const corpus::Alignment> alignments = {});

/// Columns sentence_id,cw,ap,al,dal[,aligned_proportion] followed by a
/// summary row whose sentence_id is "mean".
void write_csv(std::ostream& out, std::span<const ReadWriteTrace> traces,
               const CorpusReport& report);

}  // namespace itst::metrics
