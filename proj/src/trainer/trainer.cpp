#include "itst/trainer/trainer.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "itst/errors.hpp"

namespace itst::trainer {

using transport::TransportMatrix;

std::string_view to_string(ScheduleMode mode) {
  switch (mode) {
    case ScheduleMode::kCurriculum: return "curriculum";
    case ScheduleMode::kFixed: return "fixed";
    case ScheduleMode::kRandom: return "random";
    case ScheduleMode::kFullSentence: return "full";
  }
  return "curriculum";
}

ScheduleMode parse_schedule_mode(std::string_view text) {
  if (text == "curriculum") return ScheduleMode::kCurriculum;
  if (text == "fixed") return ScheduleMode::kFixed;
  if (text == "random") return ScheduleMode::kRandom;
  if (text == "full" || text == "full-sentence") return ScheduleMode::kFullSentence;
  throw FormatError("unknown schedule '" + std::string(text) +
                    "' (expected curriculum, fixed, random or full)");
}

void CurriculumSchedule::validate() const {
  if (!(delta_min > 0.0 && delta_min <= 1.0)) {
    throw std::invalid_argument("delta_min must be in (0, 1]");
  }
  if (!(decay > 0.0)) throw std::invalid_argument("decay must be > 0");
  if (!(fixed_delta > 0.0 && fixed_delta <= 1.0)) {
    throw std::invalid_argument("fixed_delta must be in (0, 1]");
  }
  if (!(random_lo > 0.0 && random_lo <= random_hi && random_hi <= 1.0)) {
    throw std::invalid_argument("random range must satisfy 0 < lo <= hi <= 1");
  }
}

namespace {

std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

double delta_train(const CurriculumSchedule& s, std::uint64_t n) {
  switch (s.mode) {
    case ScheduleMode::kCurriculum:
      return s.delta_min + (1.0 - s.delta_min) * std::exp(-static_cast<double>(n) / s.decay);
    case ScheduleMode::kFixed:
      return s.fixed_delta;
    case ScheduleMode::kRandom: {
      const double u = static_cast<double>(mix(mix(s.seed) ^ n) >> 11) * 0x1.0p-53;
      return s.random_lo + (s.random_hi - s.random_lo) * u;
    }
    case ScheduleMode::kFullSentence:
      return 1.0;
  }
  return 1.0;
}

std::vector<std::size_t> compute_g_train(const TransportMatrix& t, double delta) {
  if (t.weights.empty()) throw DimensionError("compute_g_train: empty transport matrix");
  if (!(delta > 0.0 && delta <= 1.0)) {
    throw std::invalid_argument("compute_g_train: delta must be in (0, 1]");
  }
  const std::size_t rows = t.target_len(), cols = t.source_len();
  std::vector<std::size_t> g(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      acc += t.weights(i, j);
      if (acc >= delta) {
        g[i] = j + 1;
        break;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (max_updates == 0) throw std::invalid_argument("max_updates must be >= 1");
  if (!(xi >= 0.0)) throw std::invalid_argument("xi must be >= 0");
  if (w_ce < 0.0 || w_latency < 0.0 || w_norm < 0.0) {
    throw std::invalid_argument("loss weights must be >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0)) {
    throw std::invalid_argument("adam hyperparameters out of range");
  }
  if (clip_norm < 0.0) throw std::invalid_argument("clip_norm must be >= 0");
  if (log_every == 0) throw std::invalid_argument("log_every must be >= 1");
  schedule.validate();
}

void TrainConfig::default_decay() {
  if (schedule.decay <= 0.0) schedule.decay = static_cast<double>(max_updates) / 5.0;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"batch_size", batch_size},
          {"max_updates", max_updates},
          {"seed", seed},
          {"xi", xi},
          {"cost_form", std::string(transport::to_string(cost_form))},
          {"schedule", std::string(to_string(schedule.mode))},
          {"delta_min", schedule.delta_min},
          {"decay", schedule.decay},
          {"fixed_delta", schedule.fixed_delta},
          {"random_lo", schedule.random_lo},
          {"random_hi", schedule.random_hi},
          {"w_ce", w_ce},
          {"w_latency", w_latency},
          {"w_norm", w_norm},
          {"optimizer", optimizer == OptimizerKind::kAdam ? "adam" : "sgd"},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"clip_norm", clip_norm},
          {"log_every", log_every}};
}

namespace {

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw std::invalid_argument(std::string(key) + ": not a number: '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument(std::string(key) + ": not a non-negative integer: '" +
                                std::string(v) + "'");
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void apply_setting(TrainConfig& t, model::ModelConfig& m, std::string_view key,
                   std::string_view value) {
  value = trim(value);
  auto u = [&] { return static_cast<std::size_t>(to_uint(key, value)); };
  auto d = [&] { return to_double(key, value); };
  try {
    if (key == "lr") t.lr = d();
    else if (key == "batch_size") t.batch_size = u();
    else if (key == "max_updates") t.max_updates = u();
    else if (key == "seed") t.seed = to_uint(key, value);
    else if (key == "xi") t.xi = d();
    else if (key == "cost_form") t.cost_form = transport::parse_cost_form(value);
    else if (key == "schedule") t.schedule.mode = parse_schedule_mode(value);
    else if (key == "delta_min") t.schedule.delta_min = d();
    else if (key == "decay") t.schedule.decay = d();
    else if (key == "fixed_delta") t.schedule.fixed_delta = d();
    else if (key == "random_lo") t.schedule.random_lo = d();
    else if (key == "random_hi") t.schedule.random_hi = d();
    else if (key == "w_ce") t.w_ce = d();
    else if (key == "w_latency") t.w_latency = d();
    else if (key == "w_norm") t.w_norm = d();
    else if (key == "optimizer") {
      if (value == "adam") t.optimizer = OptimizerKind::kAdam;
      else if (value == "sgd") t.optimizer = OptimizerKind::kSgd;
      else throw std::invalid_argument("optimizer: expected adam or sgd");
    } else if (key == "beta1") t.beta1 = d();
    else if (key == "beta2") t.beta2 = d();
    else if (key == "eps") t.eps = d();
    else if (key == "clip_norm") t.clip_norm = d();
    else if (key == "log_every") t.log_every = u();
    else if (key == "d_model") m.d_model = u();
    else if (key == "n_heads") m.n_heads = u();
    else if (key == "n_layers_enc") m.n_layers_enc = u();
    else if (key == "n_layers_dec") m.n_layers_dec = u();
    else if (key == "ffn_dim") m.ffn_dim = u();
    else if (key == "max_len") m.max_len = u();
    else if (key == "aggregation") m.aggregation = transport::parse_aggregation(value);
    else throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
  } catch (const FormatError& e) {
    throw std::invalid_argument(std::string(key) + ": " + e.what());
  }
}

std::vector<std::string> read_config_file(const std::filesystem::path& path, TrainConfig& train,
                                          model::ModelConfig& model, const ExtraSetting& extra) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  std::vector<std::string> keys;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = line;
    if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string_view::npos) throw std::invalid_argument(where + "expected key = value");
    const std::string key(trim(s.substr(0, eq)));
    try {
      const auto value = trim(s.substr(eq + 1));
      if (!extra || !extra(key, value)) apply_setting(train, model, key, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + e.what());
    }
    keys.push_back(key);
  }
  return keys;
}

// ---------------------------------------------------------------------------

LossVars itst_loss(model::Binding& b, const model::Model& m, std::span<const model::Example> batch,
                   std::span<const std::vector<std::size_t>> g, const TrainConfig& config) {
  Graph& graph = b.graph();
  auto fwd = m.forward_train(b, batch, g);
  LossVars out;
  out.ce = graph.scale(fwd.ce, 1.0 / static_cast<double>(fwd.tokens));
  const double per_sentence = 1.0 / static_cast<double>(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto cost = transport::latency_cost(batch[s].tgt.size(), batch[s].src.size(), config.xi,
                                              config.cost_form);
    for (Var t : fwd.transport[s]) {
      Var lat = transport::latency_loss(graph, t, cost);
      Var nrm = transport::norm_loss(graph, t);
      out.latency = out.latency.valid() ? graph.add(out.latency, lat) : lat;
      out.norm = out.norm.valid() ? graph.add(out.norm, nrm) : nrm;
    }
  }
  out.latency = graph.scale(out.latency, per_sentence);
  out.norm = graph.scale(out.norm, per_sentence);
  out.total = graph.add(graph.add(graph.scale(out.ce, config.w_ce),
                                  graph.scale(out.latency, config.w_latency)),
                        graph.scale(out.norm, config.w_norm));
  return out;
}

std::vector<std::vector<std::size_t>> batch_cut_points(const model::Model& m,
                                                       std::span<const model::Example> batch,
                                                       ScheduleMode mode, double delta) {
  std::vector<std::vector<std::size_t>> g;
  g.reserve(batch.size());
  for (const auto& ex : batch) {
    if (mode == ScheduleMode::kFullSentence) {
      g.emplace_back(ex.tgt.size(), ex.src.size());
    } else {
      const auto layers = m.transport(ex);
      g.push_back(compute_g_train(m.aggregate(layers), delta));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

Adam::Adam(std::span<const Parameter> params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params) {
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

void Adam::step(std::span<Parameter> params, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

Trainer::Trainer(model::Model& model, TrainConfig config)
    : model_(model), config_(std::move(config)), adam_(model.parameters(), 0, 0, 1) {
  config_.default_decay();
  if (config_.schedule.seed == 0) config_.schedule.seed = config_.seed;
  config_.validate();
  adam_ = Adam(model_.parameters(), config_.beta1, config_.beta2, config_.eps);
}

LossBreakdown Trainer::train_step(std::span<const model::Example> batch, std::uint64_t n) {
  if (batch.empty()) throw DimensionError("train_step: empty batch");
  LossBreakdown out;
  out.delta_train = delta_train(config_.schedule, n);
  Graph graph;
  model::Binding b(graph, model_);
  LossVars loss;
  try {
    const auto g = batch_cut_points(model_, batch, config_.schedule.mode, out.delta_train);
    loss = itst_loss(b, model_, batch, g, config_);
  } catch (const NonFiniteError& e) {
    throw NonFiniteError("step " + std::to_string(n) + ": " + e.what());
  }
  out.ce = graph.value(loss.ce)[0];
  out.latency = graph.value(loss.latency)[0];
  out.norm = graph.value(loss.norm)[0];
  out.total = graph.value(loss.total)[0];
  for (const auto& ex : batch) out.tokens += ex.tgt.size();
  if (!std::isfinite(out.total)) {
    std::ostringstream os;
    os << "non-finite loss at step " << n << ": ce=" << out.ce << " latency=" << out.latency
       << " norm=" << out.norm;
    throw NonFiniteError(os.str());
  }
  graph.backward(loss.total);

  auto& params = model_.parameters();
  if (config_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& p : params)
      for (double v : p.grad.values()) sq += v * v;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) {
      throw NonFiniteError("non-finite gradient at step " + std::to_string(n));
    }
    if (norm > config_.clip_norm) {
      const double f = config_.clip_norm / norm;
      for (auto& p : params)
        for (double& v : p.grad.values()) v *= f;
    }
  }
  if (config_.optimizer == OptimizerKind::kAdam) {
    adam_.step(params, config_.lr);
  } else {
    for (auto& p : params)
      for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= config_.lr * p.grad[i];
  }
  ++updates_;
  return out;
}

std::string log_line(std::uint64_t step, const LossBreakdown& l) {
  nlohmann::json j{{"step", step},
                   {"ce", l.ce},
                   {"latency", l.latency},
                   {"norm", l.norm},
                   {"delta_train", l.delta_train}};
  return j.dump();
}

std::vector<LossBreakdown> Trainer::run(std::span<const model::Example> data, std::ostream* log,
                                        const StepCallback& on_step) {
  if (data.empty()) throw DimensionError("train: empty corpus");
  std::vector<LossBreakdown> history;
  std::vector<std::size_t> order(data.size());
  std::uint64_t rng = config_.seed;
  std::size_t cursor = order.size();
  std::vector<model::Example> batch;
  for (std::size_t step = 0; step < config_.max_updates; ++step) {
    batch.clear();
    while (batch.size() < config_.batch_size) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[mix(rng++) % i]);
        }
        cursor = 0;
      }
      batch.push_back(data[order[cursor++]]);
      if (batch.size() == data.size()) break;
    }
    const auto n = updates_;
    history.push_back(train_step(batch, n));
    if (log != nullptr && (n % config_.log_every == 0 || step + 1 == config_.max_updates)) {
      *log << log_line(n, history.back()) << '\n';
    }
    if (on_step) on_step(n, history.back());
  }
  return history;
}

std::vector<model::Example> make_examples(const corpus::ParallelCorpus& corpus,
                                          const corpus::Vocabulary& src,
                                          const corpus::Vocabulary& tgt) {
  std::vector<model::Example> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus.pairs) out.push_back({src.encode(p.source), tgt.encode(p.target)});
  return out;
}

}  // namespace itst::trainer
