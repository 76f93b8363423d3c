#pragma once
// Curriculum training: cross-entropy under transport-derived cut-points plus
// the latency and normalization regularizers on every decoder layer's T.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "itst/model/model.hpp"
#include "itst/transport/transport.hpp"

namespace itst::trainer {

enum class ScheduleMode { kCurriculum, kFixed, kRandom, kFullSentence };

std::string_view to_string(ScheduleMode mode);
/// curriculum | fixed | random | full. Throws FormatError.
ScheduleMode parse_schedule_mode(std::string_view text);

struct CurriculumSchedule {
  ScheduleMode mode = ScheduleMode::kCurriculum;
  double delta_min = 0.5;
  double decay = 0.0;          // d; 0 means max_updates / 5
  double fixed_delta = 0.7;    // fixed mode
  double random_lo = 0.5;      // random mode range
  double random_hi = 1.0;
  std::uint64_t seed = 0;      // random mode

  /// Throws std::invalid_argument on out-of-range fields.
  void validate() const;
};

/// curriculum: delta_min + (1 - delta_min) exp(-N / d); fixed: fixed_delta;
/// random: uniform in [lo, hi], a pure function of (seed, N); full: 1.
double delta_train(const CurriculumSchedule& schedule, std::uint64_t n);

/// g_i = smallest j with sum_{l <= j} T_il >= delta, or J if none.
std::vector<std::size_t> compute_g_train(const transport::TransportMatrix& t, double delta);

enum class OptimizerKind { kAdam, kSgd };

struct TrainConfig {
  double lr = 5e-4;
  std::size_t batch_size = 8;
  std::size_t max_updates = 5000;
  std::uint64_t seed = 1;
  double xi = 1.0;
  transport::CostForm cost_form = transport::CostForm::kDiagonal;
  CurriculumSchedule schedule;
  double w_ce = 1.0;
  double w_latency = 1.0;
  double w_norm = 1.0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double clip_norm = 1.0;  // 0 disables
  std::size_t log_every = 1;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  /// Sets schedule.decay to max_updates / 5 when decay was not given.
  void default_decay();
  nlohmann::json to_json() const;
};

/// Applies one "key = value" assignment; unknown keys and bad values throw
/// std::invalid_argument. Model keys (d_model, n_heads, ...) go to model.
void apply_setting(TrainConfig& train, model::ModelConfig& model, std::string_view key,
                   std::string_view value);
/// Reads a config file of "key = value" lines with '#' comments. Returns the
/// keys that were set so callers can tell explicit values from defaults.
/// extra, when given, sees each pair first and returns true if it consumed it.
using ExtraSetting = std::function<bool(std::string_view key, std::string_view value)>;
std::vector<std::string> read_config_file(const std::filesystem::path& path, TrainConfig& train,
                                          model::ModelConfig& model,
                                          const ExtraSetting& extra = {});

struct LossBreakdown {
  double ce = 0.0;       // per target token
  double latency = 0.0;  // per sentence, summed over layers
  double norm = 0.0;     // per sentence, summed over layers
  double total = 0.0;
  double delta_train = 1.0;
  std::size_t tokens = 0;
};

struct LossVars {
  Var total, ce, latency, norm;
};

/// Builds the weighted training objective for a batch with fixed cut-points.
LossVars itst_loss(model::Binding& b, const model::Model& m, std::span<const model::Example> batch,
                   std::span<const std::vector<std::size_t>> g, const TrainConfig& config);

/// Cut-points for a batch: full source when delta >= 1 in full-sentence mode,
/// otherwise from the policy aggregate of a full-source pass.
std::vector<std::vector<std::size_t>> batch_cut_points(const model::Model& m,
                                                       std::span<const model::Example> batch,
                                                       ScheduleMode mode, double delta);

class Adam {
 public:
  Adam(std::span<const Parameter> params, double beta1, double beta2, double eps);
  void step(std::span<Parameter> params, double lr);
  std::uint64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

class Trainer {
 public:
  Trainer(model::Model& model, TrainConfig config);

  /// One optimizer step at update count n. Throws NonFiniteError naming the
  /// step and the term values when the loss is not finite.
  LossBreakdown train_step(std::span<const model::Example> batch, std::uint64_t n);

  using StepCallback = std::function<void(std::uint64_t step, const LossBreakdown&)>;
  /// Runs max_updates steps over shuffled batches, logging one JSON line per
  /// log_every steps.
  std::vector<LossBreakdown> run(std::span<const model::Example> data, std::ostream* log = nullptr,
                                 const StepCallback& on_step = {});

  const TrainConfig& config() const { return config_; }
  std::uint64_t updates() const { return updates_; }

 private:
  model::Model& model_;
  TrainConfig config_;
  Adam adam_;
  std::uint64_t updates_ = 0;
};

/// One JSON line: {"step", "ce", "latency", "norm", "delta_train"}.
std::string log_line(std::uint64_t step, const LossBreakdown& loss);

/// Encodes a corpus into examples with EOS appended on both sides.
std::vector<model::Example> make_examples(const corpus::ParallelCorpus& corpus,
                                          const corpus::Vocabulary& src,
                                          const corpus::Vocabulary& tgt);

}  // namespace itst::trainer
