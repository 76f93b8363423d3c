#pragma once
// The itst command line and the toy-experiment helpers behind it: data
// loading from a config, training, and the delta-grid evaluation used by
// ablate-cost.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "itst/corpus/corpus.hpp"
#include "itst/metrics/latency.hpp"
#include "itst/model/model.hpp"
#include "itst/trainer/trainer.hpp"
#include "json.hpp"

namespace itst::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Bad flags, configs or inputs (exit code 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Where training and held-out pairs come from. Config keys are prefixed with
/// "data."; file paths win over the synthetic task and are relative to the
/// config file.
struct DataSpec {
  std::string task = "copy";
  std::size_t pairs = 1000;
  std::size_t test_pairs = 100;
  std::size_t min_len = 3;
  std::size_t max_len = 8;
  std::size_t vocab = 32;
  std::uint64_t seed = 1;
  std::uint64_t test_seed = 99;
  std::filesystem::path src, tgt, tsv;
  std::filesystem::path test_src, test_tgt, test_align;

  /// Returns false for keys outside "data.".
  bool set(std::string_view key, std::string_view value, const std::filesystem::path& base);
  nlohmann::json to_json() const;
  corpus::ParallelCorpus load_train() const;
  /// Throws UsageError when file data has no held-out files.
  corpus::ParallelCorpus load_test() const;
};

struct Setup {
  trainer::TrainConfig train;
  model::ModelConfig model;
  DataSpec data;

  nlohmann::json to_json() const;
};

/// Defaults, overlaid with the config file when one is given.
Setup load_setup(const std::optional<std::filesystem::path>& config);

/// curriculum | random | full | fixed | fixed:<delta>
void apply_mode(trainer::TrainConfig& train, std::string_view mode);

struct TrainedModel {
  model::Model model;
  corpus::Vocabulary src_vocab;
  corpus::Vocabulary tgt_vocab;
  std::vector<trainer::LossBreakdown> history;
};

/// Builds vocabularies from the training data, initializes the model from
/// train.seed and runs the trainer.
TrainedModel train_model(const Setup& setup, std::ostream* log = nullptr,
                         const trainer::Trainer::StepCallback& on_step = {});

struct GridPoint {
  double delta = 0.0;
  metrics::LatencyReport latency;  // over traces that were not truncated
  double token_accuracy = 0.0;
  double exact_match = 0.0;
  double full_source = 0.0;  // fraction of written tokens with g_i = J
  std::size_t truncated = 0;
  std::optional<double> aligned_proportion;  // forced decoding of the reference
};

/// Free-running decoding of every test source at each delta. With
/// forced_alignment and gold alignments on every pair, also decodes the
/// references to measure aligned proportion.
std::vector<GridPoint> evaluate_grid(const model::Model& m, const corpus::Vocabulary& src_vocab,
                                     const corpus::Vocabulary& tgt_vocab,
                                     const corpus::ParallelCorpus& test,
                                     std::span<const double> deltas, bool forced_alignment);
void write_grid_csv(std::ostream& out, std::span<const GridPoint> grid);

/// Row sums of the policy-aggregate transport, full source, teacher forced.
std::vector<double> row_sums(const model::Model& m, std::span<const model::Example> examples);
/// Fraction of values within tol of 1.
double fraction_near_one(std::span<const double> values, double tol);
/// Linear interpolation between order statistics; sorted must be non-empty.
double quantile(std::span<const double> sorted, double q);

/// Runs one command line (without the program name). Writes results to out
/// and the resolved config and diagnostics to err; returns the exit code.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace itst::cli
