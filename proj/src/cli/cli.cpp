#include "itst/cli/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "itst/errors.hpp"
#include "itst/metrics/quality.hpp"
#include "itst/policy/policy.hpp"
#include "itst/tensor/grad_check.hpp"

namespace itst::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t parse_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument(std::string(key) + ": expected a non-negative integer, got '" +
                                std::string(v) + "'");
  }
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// short form for file names: 0.5, 1, 2
std::string short_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

enum class Level { kInfo, kDebug };

Level log_level() {
  const char* env = std::getenv("ITST_LOG");
  if (env == nullptr || *env == '\0' || std::string_view(env) == "info") return Level::kInfo;
  if (std::string_view(env) == "debug") return Level::kDebug;
  throw UsageError("ITST_LOG must be debug or info, got '" + std::string(env) + "'");
}

void require_file(const fs::path& p, std::string_view what) {
  if (!fs::exists(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path() && !fs::exists(path.parent_path())) {
    throw UsageError("output directory does not exist: " + path.parent_path().string());
  }
  model::write_atomic(path, text);
}

}  // namespace

// ---------------------------------------------------------------------------

bool DataSpec::set(std::string_view key, std::string_view value, const fs::path& base) {
  if (!key.starts_with("data.")) return false;
  const auto k = key.substr(5);
  auto path = [&] { return fs::path(value).is_absolute() ? fs::path(value) : base / value; };
  if (k == "task") {
    try {
      corpus::parse_synth_kind(value);
    } catch (const FormatError& e) {
      throw std::invalid_argument(e.what());
    }
    task = value;
  } else if (k == "pairs") pairs = parse_size(key, value);
  else if (k == "test_pairs") test_pairs = parse_size(key, value);
  else if (k == "min_len") min_len = parse_size(key, value);
  else if (k == "max_len") max_len = parse_size(key, value);
  else if (k == "vocab") vocab = parse_size(key, value);
  else if (k == "seed") seed = parse_size(key, value);
  else if (k == "test_seed") test_seed = parse_size(key, value);
  else if (k == "src") src = path();
  else if (k == "tgt") tgt = path();
  else if (k == "tsv") tsv = path();
  else if (k == "test_src") test_src = path();
  else if (k == "test_tgt") test_tgt = path();
  else if (k == "test_align") test_align = path();
  else throw std::invalid_argument("unknown key '" + std::string(key) + "'");
  return true;
}

json DataSpec::to_json() const {
  json j;
  if (!tsv.empty()) j["tsv"] = tsv.string();
  if (!src.empty()) {
    j["src"] = src.string();
    j["tgt"] = tgt.string();
  }
  if (tsv.empty() && src.empty()) {
    j["task"] = task;
    j["pairs"] = pairs;
    j["min_len"] = min_len;
    j["max_len"] = max_len;
    j["vocab"] = vocab;
    j["seed"] = seed;
  }
  if (!test_src.empty()) {
    j["test_src"] = test_src.string();
    j["test_tgt"] = test_tgt.string();
    if (!test_align.empty()) j["test_align"] = test_align.string();
  } else {
    j["test_pairs"] = test_pairs;
    j["test_seed"] = test_seed;
  }
  return j;
}

corpus::ParallelCorpus DataSpec::load_train() const {
  if (!tsv.empty()) {
    require_file(tsv, "training data");
    return corpus::load_tsv(tsv);
  }
  if (!src.empty() || !tgt.empty()) {
    if (src.empty() || tgt.empty()) throw UsageError("data.src and data.tgt must be given together");
    require_file(src, "training source");
    require_file(tgt, "training target");
    return corpus::load_corpus(src, tgt);
  }
  return corpus::synth_task(corpus::parse_synth_kind(task), pairs, {min_len, max_len}, vocab, seed);
}

corpus::ParallelCorpus DataSpec::load_test() const {
  if (!test_src.empty() || !test_tgt.empty()) {
    if (test_src.empty() || test_tgt.empty()) {
      throw UsageError("data.test_src and data.test_tgt must be given together");
    }
    require_file(test_src, "held-out source");
    require_file(test_tgt, "held-out target");
    auto c = corpus::load_corpus(test_src, test_tgt);
    if (!test_align.empty()) {
      require_file(test_align, "held-out alignments");
      auto a = corpus::read_pharaoh(test_align);
      if (a.size() != c.size()) {
        throw UsageError("held-out alignments: " + std::to_string(a.size()) + " lines for " +
                         std::to_string(c.size()) + " pairs");
      }
      for (std::size_t i = 0; i < a.size(); ++i) c.pairs[i].alignment = std::move(a[i]);
    }
    return c;
  }
  if (!tsv.empty() || !src.empty()) throw UsageError("file data needs data.test_src and data.test_tgt");
  return corpus::synth_task(corpus::parse_synth_kind(task), test_pairs, {min_len, max_len}, vocab,
                            test_seed);
}

json Setup::to_json() const {
  auto m = model.to_json();
  m.erase("vocab_src");
  m.erase("vocab_tgt");
  return {{"train", train.to_json()}, {"model", m}, {"data", data.to_json()}};
}

Setup load_setup(const std::optional<fs::path>& config) {
  Setup s;
  if (!config) return s;
  if (!fs::is_regular_file(*config)) throw UsageError("config file not found: " + config->string());
  const auto base = config->parent_path();
  trainer::read_config_file(*config, s.train, s.model, [&](std::string_view k, std::string_view v) {
    return s.data.set(k, v, base);
  });
  return s;
}

void apply_mode(trainer::TrainConfig& train, std::string_view mode) {
  auto& sch = train.schedule;
  if (mode.starts_with("fixed:")) {
    const auto v = mode.substr(6);
    double d = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
    if (ec != std::errc() || p != v.data() + v.size() || !(d > 0.0 && d <= 1.0)) {
      throw UsageError("--mode fixed:<delta> needs 0 < delta <= 1, got '" + std::string(v) + "'");
    }
    sch.mode = trainer::ScheduleMode::kFixed;
    sch.fixed_delta = d;
    return;
  }
  try {
    sch.mode = trainer::parse_schedule_mode(mode);
  } catch (const FormatError& e) {
    throw UsageError(std::string("--mode: ") + e.what());
  }
}

TrainedModel train_model(const Setup& setup, std::ostream* log,
                         const trainer::Trainer::StepCallback& on_step) {
  const auto data = setup.data.load_train();
  if (data.empty()) throw UsageError("training data is empty");
  auto src_vocab = corpus::Vocabulary::build(data.sources());
  auto tgt_vocab = corpus::Vocabulary::build(data.targets());
  auto mc = setup.model;
  mc.vocab_src = src_vocab.size();
  mc.vocab_tgt = tgt_vocab.size();
  TrainedModel out{model::Model(mc, setup.train.seed), std::move(src_vocab), std::move(tgt_vocab), {}};
  const auto examples = trainer::make_examples(data, out.src_vocab, out.tgt_vocab);
  trainer::Trainer t(out.model, setup.train);
  out.history = t.run(examples, log, on_step);
  return out;
}

std::vector<GridPoint> evaluate_grid(const model::Model& m, const corpus::Vocabulary& src_vocab,
                                     const corpus::Vocabulary& tgt_vocab,
                                     const corpus::ParallelCorpus& test,
                                     std::span<const double> deltas, bool forced_alignment) {
  if (test.empty()) throw UsageError("held-out data is empty");
  const auto examples = trainer::make_examples(test, src_vocab, tgt_vocab);
  const bool aligned = forced_alignment && std::all_of(test.pairs.begin(), test.pairs.end(),
                                                       [](auto& p) { return !p.alignment.empty(); });
  const auto alignments = test.alignments();
  std::vector<GridPoint> grid;
  for (double delta : deltas) {
    GridPoint pt;
    pt.delta = delta;
    std::vector<policy::ReadWriteTrace> complete, forced;
    std::vector<std::vector<int>> hyps, refs;
    std::size_t written = 0, at_end = 0;
    for (const auto& ex : examples) {
      policy::SessionOptions o;
      o.delta = delta;
      auto r = policy::run_simultaneous(m, ex.src, o);
      for (auto g : r.trace.g) at_end += g == ex.src.size();
      written += r.trace.g.size();
      if (r.trace.truncated) ++pt.truncated;
      else complete.push_back(std::move(r.trace));
      hyps.push_back(std::move(r.hyp));
      refs.push_back(ex.tgt);
      if (aligned) {
        o.forced_target = ex.tgt;
        forced.push_back(policy::run_simultaneous(m, ex.src, o).trace);
      }
    }
    if (complete.empty()) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      pt.latency = {nan, nan, nan, nan};
    } else {
      pt.latency = metrics::evaluate_corpus(complete).mean;
    }
    const auto q = metrics::evaluate_quality(hyps, refs);
    pt.token_accuracy = q.token_accuracy;
    pt.exact_match = q.exact_match;
    pt.full_source = written == 0 ? 0.0 : static_cast<double>(at_end) / static_cast<double>(written);
    if (aligned) pt.aligned_proportion = metrics::evaluate_corpus(forced, alignments).mean_aligned;
    grid.push_back(pt);
  }
  return grid;
}

void write_grid_csv(std::ostream& out, std::span<const GridPoint> grid) {
  const bool aligned =
      std::any_of(grid.begin(), grid.end(), [](auto& p) { return p.aligned_proportion.has_value(); });
  out << "delta,al,ap,cw,dal,token_accuracy,exact_match,full_source,truncated";
  if (aligned) out << ",aligned_proportion";
  out << '\n';
  for (const auto& p : grid) {
    out << fmt(p.delta) << ',' << fmt(p.latency.al) << ',' << fmt(p.latency.ap) << ','
        << fmt(p.latency.cw) << ',' << fmt(p.latency.dal) << ',' << fmt(p.token_accuracy) << ','
        << fmt(p.exact_match) << ',' << fmt(p.full_source) << ',' << p.truncated;
    if (aligned) out << ',' << (p.aligned_proportion ? fmt(*p.aligned_proportion) : "");
    out << '\n';
  }
}

std::vector<double> row_sums(const model::Model& m, std::span<const model::Example> examples) {
  std::vector<double> sums;
  for (const auto& ex : examples) {
    const auto layers = m.transport(ex);
    const auto agg = m.aggregate(layers);
    for (std::size_t i = 0; i < agg.target_len(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < agg.source_len(); ++j) s += agg.weights(i, j);
      sums.push_back(s);
    }
  }
  return sums;
}

double fraction_near_one(std::span<const double> values, double tol) {
  if (values.empty()) return 0.0;
  const auto n = std::count_if(values.begin(), values.end(),
                               [&](double v) { return std::fabs(v - 1.0) <= tol; });
  return static_cast<double>(n) / static_cast<double>(values.size());
}

double quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DimensionError("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct TrainArgs {
  std::optional<std::string> config;
  std::optional<std::string> mode, cost;
  std::optional<double> xi;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct SimulateArgs {
  std::string ckpt, src, out;
  std::vector<double> deltas;
  std::optional<std::string> force_tgt;
  std::size_t max_len = 0;
};

struct EvalArgs {
  std::string traces, out;
  std::optional<std::string> align;
  std::optional<double> delta;
};

struct DiagArgs {
  std::string ckpt, src, tgt, out;
  double bin_width = 0.05;
};

struct AblateArgs {
  std::optional<std::string> config;
  std::vector<std::string> forms{"diagonal", "upper", "lower"};
  std::vector<double> xi_list;
  std::vector<double> deltas{0.2, 0.4, 0.6, 0.8, 1.0};
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct GradArgs {
  std::uint64_t seed = 1;
  std::size_t d_model = 8;
  std::size_t layers = 2;
  double tol = 1e-3;
  double h = 1e-5;
};

void print_config(std::ostream& err, const std::string& command, json j) {
  j["command"] = command;
  err << "config " << j.dump() << '\n';
}

Setup resolve_setup(const std::optional<std::string>& config, const std::optional<std::string>& mode,
                    const std::optional<std::string>& cost, std::optional<double> xi,
                    std::optional<std::uint64_t> seed) {
  auto s = load_setup(config ? std::optional<fs::path>(*config) : std::nullopt);
  if (mode) apply_mode(s.train, *mode);
  if (cost) {
    try {
      s.train.cost_form = transport::parse_cost_form(*cost);
    } catch (const FormatError& e) {
      throw UsageError(std::string("--cost: ") + e.what());
    }
  }
  if (xi) s.train.xi = *xi;
  if (seed) s.train.seed = *seed;
  s.train.default_decay();
  try {
    s.train.validate();
    s.model.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  return s;
}

void make_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory " + dir.string());
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err, Level level) {
  const auto setup = resolve_setup(a.config, a.mode, a.cost, a.xi, a.seed);
  auto cfg = setup.to_json();
  cfg["out"] = a.out;
  print_config(err, "train", cfg);
  const fs::path dir = a.out;
  make_out_dir(dir);
  std::ostringstream log;
  auto trained = train_model(setup, &log, [&](std::uint64_t n, const trainer::LossBreakdown& l) {
    if (level == Level::kDebug) err << "debug " << trainer::log_line(n, l) << '\n';
  });
  const auto& last = trained.history.back();
  write_text(dir / "train_log.jsonl", log.str());
  model::save_checkpoint(dir / "checkpoint.json", trained.model, trained.history.size(),
                         last.delta_train, trained.src_vocab, trained.tgt_vocab);
  out << "trained " << trained.history.size() << " updates; final ce " << fmt(last.ce)
      << " latency " << fmt(last.latency) << " norm " << fmt(last.norm) << '\n';
  out << "wrote " << (dir / "checkpoint.json").string() << '\n';
  return kExitOk;
}

model::Checkpoint load_ckpt(const std::string& path) {
  require_file(path, "checkpoint");
  return model::load_checkpoint(path);
}

int cmd_simulate(const SimulateArgs& a, std::ostream& out, std::ostream& err, Level level) {
  for (double d : a.deltas) {
    if (!(d > 0.0 && d <= 1.0)) throw UsageError("--delta out of range (0, 1]: " + fmt(d));
  }
  print_config(err, "simulate",
               {{"ckpt", a.ckpt}, {"src", a.src}, {"out", a.out}, {"deltas", a.deltas},
                {"force_tgt", a.force_tgt ? json(*a.force_tgt) : json(nullptr)},
                {"max_len", a.max_len}});
  const auto ck = load_ckpt(a.ckpt);
  require_file(a.src, "source file");
  const auto sources = corpus::read_sentences(a.src);
  if (sources.empty()) throw UsageError("empty source file: " + a.src);
  std::vector<corpus::Sentence> forced;
  if (a.force_tgt) {
    require_file(*a.force_tgt, "forced target file");
    forced = corpus::read_sentences(*a.force_tgt);
    if (forced.size() != sources.size()) {
      throw UsageError("forced target has " + std::to_string(forced.size()) + " lines for " +
                       std::to_string(sources.size()) + " sources");
    }
  }
  std::vector<policy::ReadWriteTrace> traces;
  for (double d : a.deltas) {
    for (std::size_t s = 0; s < sources.size(); ++s) {
      policy::SessionOptions o;
      o.delta = d;
      o.max_target_len = a.max_len;
      if (a.force_tgt) o.forced_target = ck.tgt_vocab.encode(forced[s]);
      auto r = policy::run_simultaneous(ck.model, ck.src_vocab.encode(sources[s]), o);
      r.trace.sentence_id = s;
      r.trace.hyp_text = corpus::join(ck.tgt_vocab.decode(r.hyp));
      if (level == Level::kDebug) {
        err << "debug delta " << fmt(d) << " sentence " << s << " reads " << r.reads << " writes "
            << r.writes << '\n';
      }
      traces.push_back(std::move(r.trace));
    }
  }
  std::ostringstream text;
  policy::write_traces(text, traces);
  write_text(a.out, text.str());
  out << "wrote " << traces.size() << " traces to " << a.out << '\n';
  return kExitOk;
}

// A truncated trace never reaches the end of its source, so AL is undefined.
void drop_truncated(std::vector<policy::ReadWriteTrace>& traces,
                    std::vector<corpus::Alignment>* alignments, std::ostream& err) {
  std::size_t kept = 0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (traces[i].truncated) continue;
    if (kept != i) {
      traces[kept] = std::move(traces[i]);
      if (alignments != nullptr) (*alignments)[kept] = std::move((*alignments)[i]);
    }
    ++kept;
  }
  if (kept < traces.size()) {
    err << "warning: skipping " << traces.size() - kept << " truncated traces\n";
  }
  traces.resize(kept);
  if (alignments != nullptr) alignments->resize(kept);
  if (traces.empty()) throw UsageError("every trace is truncated");
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err, Level) {
  print_config(err, "eval-latency",
               {{"traces", a.traces}, {"align", a.align ? json(*a.align) : json(nullptr)},
                {"delta", a.delta ? json(*a.delta) : json(nullptr)}, {"out", a.out}});
  require_file(a.traces, "trace file");
  auto traces = policy::read_traces(fs::path(a.traces));
  if (a.delta) {
    std::erase_if(traces, [&](const policy::ReadWriteTrace& t) { return t.delta != a.delta; });
  }
  if (traces.empty()) throw UsageError("no traces to evaluate in " + a.traces);
  metrics::CorpusReport report;
  if (a.align) {
    require_file(*a.align, "alignment file");
    const auto gold = corpus::read_pharaoh(*a.align);
    std::vector<corpus::Alignment> per_trace;
    const bool by_id = std::all_of(traces.begin(), traces.end(),
                                   [](auto& t) { return t.sentence_id.has_value(); });
    if (by_id) {
      std::size_t distinct = 0;
      std::vector<bool> seen(gold.size(), false);
      for (const auto& t : traces) {
        if (*t.sentence_id >= gold.size()) {
          throw UsageError("alignment/trace count mismatch: trace for sentence " +
                           std::to_string(*t.sentence_id) + " but " + std::to_string(gold.size()) +
                           " alignment lines");
        }
        if (!seen[*t.sentence_id]) {
          seen[*t.sentence_id] = true;
          ++distinct;
        }
        per_trace.push_back(gold[*t.sentence_id]);
      }
      if (distinct != gold.size()) {
        throw UsageError("alignment/trace count mismatch: " + std::to_string(gold.size()) +
                         " alignment lines for " + std::to_string(distinct) + " sentences");
      }
    } else {
      if (gold.size() != traces.size()) {
        throw UsageError("alignment/trace count mismatch: " + std::to_string(gold.size()) +
                         " alignment lines for " + std::to_string(traces.size()) + " traces");
      }
      per_trace = gold;
    }
    drop_truncated(traces, &per_trace, err);
    report = metrics::evaluate_corpus(traces, per_trace);
  } else {
    drop_truncated(traces, nullptr, err);
    report = metrics::evaluate_corpus(traces);
  }
  std::ostringstream csv;
  metrics::write_csv(csv, traces, report);
  write_text(a.out, csv.str());
  out << "sentences " << traces.size() << " AL " << fmt(report.mean.al) << " AP "
      << fmt(report.mean.ap) << " CW " << fmt(report.mean.cw) << " DAL " << fmt(report.mean.dal);
  if (report.mean_aligned) out << " aligned " << fmt(*report.mean_aligned);
  out << '\n';
  return kExitOk;
}

int cmd_diag(const DiagArgs& a, std::ostream& out, std::ostream& err, Level) {
  if (!(a.bin_width > 0.0)) throw UsageError("--bin-width must be positive");
  print_config(err, "diag-norm",
               {{"ckpt", a.ckpt}, {"src", a.src}, {"tgt", a.tgt}, {"out", a.out},
                {"bin_width", a.bin_width}});
  const auto ck = load_ckpt(a.ckpt);
  require_file(a.src, "source file");
  require_file(a.tgt, "target file");
  const auto data = corpus::load_corpus(a.src, a.tgt);
  if (data.empty()) throw UsageError("empty input: " + a.src);
  const auto examples = trainer::make_examples(data, ck.src_vocab, ck.tgt_vocab);
  auto sums = row_sums(ck.model, examples);
  std::sort(sums.begin(), sums.end());
  double mean = 0.0;
  for (double s : sums) mean += s;
  mean /= static_cast<double>(sums.size());

  std::ostringstream csv;
  csv << "kind,x,value\n";
  csv << "summary,rows," << sums.size() << '\n';
  csv << "summary,mean," << fmt(mean) << '\n';
  csv << "summary,within_0.05," << fmt(fraction_near_one(sums, 0.05)) << '\n';
  csv << "summary,within_0.15," << fmt(fraction_near_one(sums, 0.15)) << '\n';
  csv << "summary,bin_width," << short_num(a.bin_width) << '\n';
  for (double q : {0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0}) {
    csv << "quantile," << short_num(q) << ',' << fmt(quantile(sums, q)) << '\n';
  }
  // bins [k w, (k+1) w) from 0 up to the largest sum
  std::map<long, std::size_t> bins;
  for (double s : sums) ++bins[static_cast<long>(std::floor(s / a.bin_width))];
  for (long k = std::min(0L, bins.begin()->first); k <= bins.rbegin()->first; ++k) {
    auto it = bins.find(k);
    csv << "bin," << short_num(static_cast<double>(k) * a.bin_width) << ','
        << (it == bins.end() ? 0 : it->second) << '\n';
  }
  write_text(a.out, csv.str());
  out << "rows " << sums.size() << " mean " << fmt(mean) << " within 1+-0.15 "
      << fmt(fraction_near_one(sums, 0.15)) << '\n';
  return kExitOk;
}

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err, Level level) {
  auto base = resolve_setup(a.config, a.mode, std::nullopt, std::nullopt, a.seed);
  std::vector<transport::CostForm> forms;
  for (const auto& f : a.forms) {
    try {
      forms.push_back(transport::parse_cost_form(f));
    } catch (const FormatError& e) {
      throw UsageError(std::string("--forms: ") + e.what());
    }
  }
  if (forms.empty()) throw UsageError("--forms is empty");
  auto xis = a.xi_list.empty() ? std::vector<double>{base.train.xi} : a.xi_list;
  for (double xi : xis) {
    if (!(xi >= 0.0)) throw UsageError("--xi-list values must be >= 0");
  }
  for (double d : a.deltas) {
    if (!(d > 0.0 && d <= 1.0)) throw UsageError("--deltas out of range (0, 1]: " + fmt(d));
  }
  auto cfg = base.to_json();
  cfg["forms"] = a.forms;
  cfg["xi_list"] = xis;
  cfg["deltas"] = a.deltas;
  cfg["out"] = a.out;
  print_config(err, "ablate-cost", cfg);
  make_out_dir(a.out);
  const auto test = base.data.load_test();
  for (auto form : forms) {
    for (double xi : xis) {
      auto s = base;
      s.train.cost_form = form;
      s.train.xi = xi;
      const std::string name =
          "ablate_" + std::string(transport::to_string(form)) + "_xi" + short_num(xi) + ".csv";
      if (level == Level::kDebug) err << "debug training " << name << '\n';
      auto trained = train_model(s);
      const auto grid =
          evaluate_grid(trained.model, trained.src_vocab, trained.tgt_vocab, test, a.deltas, false);
      std::ostringstream csv;
      write_grid_csv(csv, grid);
      write_text(fs::path(a.out) / name, csv.str());
      double mean_al = 0.0;
      for (const auto& p : grid) mean_al += p.latency.al;
      out << name << " mean AL " << fmt(mean_al / static_cast<double>(grid.size())) << '\n';
    }
  }
  return kExitOk;
}

int cmd_grad(const GradArgs& a, std::ostream& out, std::ostream& err, Level) {
  print_config(err, "grad-check",
               {{"seed", a.seed}, {"d_model", a.d_model}, {"layers", a.layers}, {"tol", a.tol},
                {"h", a.h}});
  if (a.d_model == 0 || a.layers == 0) throw UsageError("--d-model and --layers must be positive");
  const auto data = corpus::synth_task(corpus::SynthKind::kCopy, 2, {3, 5}, 12, a.seed);
  auto sv = corpus::Vocabulary::build(data.sources());
  auto tv = corpus::Vocabulary::build(data.targets());
  model::ModelConfig mc;
  mc.vocab_src = sv.size();
  mc.vocab_tgt = tv.size();
  mc.d_model = a.d_model;
  mc.n_heads = 2;
  mc.n_layers_enc = a.layers;
  mc.n_layers_dec = a.layers;
  mc.ffn_dim = 2 * a.d_model;
  try {
    mc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  model::Model m(mc, a.seed);
  const auto batch = trainer::make_examples(data, sv, tv);
  const auto g = trainer::batch_cut_points(m, batch, trainer::ScheduleMode::kCurriculum, 0.6);
  std::vector<Parameter*> params;
  for (auto& p : m.parameters()) params.push_back(&p);
  bool ok = true;
  const char* names[] = {"ce", "latency", "norm", "total"};
  for (int term = 0; term < 4; ++term) {
    trainer::TrainConfig cfg;
    cfg.w_ce = term == 0 || term == 3;
    cfg.w_latency = term == 1 || term == 3;
    cfg.w_norm = term == 2 || term == 3;
    auto f = [&](Graph& graph) {
      model::Binding b(graph, m);
      return trainer::itst_loss(b, m, batch, g, cfg).total;
    };
    const auto r = grad_check(f, params, a.h, a.tol);
    ok = ok && r.passed;
    out << names[term] << " max_rel " << fmt(r.max_rel_error) << " checked " << r.checked << ' '
        << (r.passed ? "PASS" : "FAIL");
    if (!r.passed) out << " worst " << r.worst_parameter << '[' << r.worst_index << ']';
    out << '\n';
  }
  return ok ? kExitOk : kExitRuntime;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Simultaneous translation with information transport", "itst"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint and log");
  train->add_option("--config", ta.config, "Config file of key = value lines");
  train->add_option("--mode", ta.mode, "curriculum | fixed:<delta> | random | full");
  train->add_option("--cost", ta.cost, "diagonal | upper | lower");
  train->add_option("--xi", ta.xi, "Latency cost tolerance");
  train->add_option("--seed", ta.seed, "Seed for initialization and shuffling");
  train->add_option("--out", ta.out, "Output directory")->required();

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Stream sources through the read/write policy");
  sim->add_option("--ckpt", sa.ckpt, "Checkpoint")->required();
  sim->add_option("--delta", sa.deltas, "Threshold, repeatable")->required()->take_all();
  sim->add_option("--src", sa.src, "Source sentences, one per line")->required();
  sim->add_option("--out", sa.out, "Trace JSONL output")->required();
  sim->add_option("--force-tgt", sa.force_tgt, "Write these targets instead of greedy tokens");
  sim->add_option("--max-len", sa.max_len, "Cap on written tokens (0: 2J+8)");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval-latency", "Latency metrics of a trace file as CSV");
  eval->add_option("--traces", ea.traces, "Trace JSONL")->required();
  eval->add_option("--align", ea.align, "Pharaoh alignments, one line per sentence");
  eval->add_option("--delta", ea.delta, "Only traces made at this threshold");
  eval->add_option("--out", ea.out, "CSV output")->required();

  DiagArgs da;
  auto* diag = app.add_subcommand("diag-norm", "Distribution of transport row sums");
  diag->add_option("--ckpt", da.ckpt, "Checkpoint")->required();
  diag->add_option("--src", da.src, "Source sentences")->required();
  diag->add_option("--tgt", da.tgt, "Target sentences")->required();
  diag->add_option("--out", da.out, "CSV output")->required();
  diag->add_option("--bin-width", da.bin_width, "Histogram bin width");

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate-cost", "Train one model per cost form and xi");
  ablate->add_option("--config", aa.config, "Config file");
  ablate->add_option("--forms", aa.forms, "Comma-separated cost forms")->delimiter(',');
  ablate->add_option("--xi-list", aa.xi_list, "Comma-separated xi values")->delimiter(',');
  ablate->add_option("--deltas", aa.deltas, "Comma-separated thresholds")->delimiter(',');
  ablate->add_option("--mode", aa.mode, "Training schedule");
  ablate->add_option("--seed", aa.seed, "Seed shared by every setting");
  ablate->add_option("--out", aa.out, "Output directory")->required();

  GradArgs ga;
  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of the training loss");
  grad->add_option("--seed", ga.seed, "Seed");
  grad->add_option("--d-model", ga.d_model, "Model width");
  grad->add_option("--layers", ga.layers, "Encoder and decoder layers");
  grad->add_option("--tol", ga.tol, "Relative tolerance");
  grad->add_option("--step", ga.h, "Difference step");

  std::vector<const char*> argv{"itst"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    const auto level = log_level();
    if (train->parsed()) return cmd_train(ta, out, err, level);
    if (sim->parsed()) return cmd_simulate(sa, out, err, level);
    if (eval->parsed()) return cmd_eval(ea, out, err, level);
    if (diag->parsed()) return cmd_diag(da, out, err, level);
    if (ablate->parsed()) return cmd_ablate(aa, out, err, level);
    if (grad->parsed()) return cmd_grad(ga, out, err, level);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IndexError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TraceIncompleteError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace itst::cli
