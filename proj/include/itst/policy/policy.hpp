#pragma once
// Threshold read/write engine over a streaming source, and the translators it
// drives: the transformer itself, or a fixed transport matrix for testing.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "itst/model/model.hpp"
#include "itst/policy/trace.hpp"
#include "itst/transport/transport.hpp"

namespace itst::policy {

/// What the engine needs at one decision point: the policy-aggregate transport
/// row of the next target position over the j received source tokens, and the
/// token that position would be written as.
struct Peek {
  std::vector<double> transport_row;
  int token = -1;
};

class Translator {
 public:
  virtual ~Translator() = default;
  /// Forget all received source.
  virtual void reset() = 0;
  /// The received source prefix grew; prefix holds all of it.
  virtual void receive(std::span<const int> prefix) = 0;
  /// state.prefix holds the written tokens and state.g their cut-points.
  virtual Peek peek(const model::DecoderState& state) = 0;
};

/// Greedy decoding with the transformer; re-encodes the prefix on every READ
/// and recomputes the decoder over the written prefix at every decision.
class ModelTranslator final : public Translator {
 public:
  explicit ModelTranslator(const model::Model& model) : model_(&model) {}
  void reset() override { z_ = {}; }
  void receive(std::span<const int> prefix) override;
  Peek peek(const model::DecoderState& state) override;
  const model::EncoderStates& states() const { return z_; }

 private:
  const model::Model* model_;
  model::EncoderStates z_;
};

/// Replays a fixed I x J transport matrix; token i is tokens[i], or EOS past
/// the end of tokens.
class MatrixTranslator final : public Translator {
 public:
  MatrixTranslator(transport::TransportMatrix t, std::vector<int> tokens);
  void reset() override { received_ = 0; }
  void receive(std::span<const int> prefix) override { received_ = prefix.size(); }
  Peek peek(const model::DecoderState& state) override;

 private:
  transport::TransportMatrix t_;
  std::vector<int> tokens_;
  std::size_t received_ = 0;
};

enum class Action { kRead, kWrite };

struct Decision {
  Action action = Action::kRead;
  int token = -1;  // set for WRITE
};

struct SessionOptions {
  double delta = 0.7;
  /// Length cap on written tokens; 0 means 2 J + 8, or the forced target's
  /// length when one is given.
  std::size_t max_target_len = 0;
  /// Write these tokens instead of the greedy choice; the session ends when
  /// they are exhausted or EOS is written.
  std::optional<std::vector<int>> forced_target;
  /// A WRITE of EOS before the whole source is received becomes a READ.
  bool defer_early_eos = true;
};

class StreamingSession {
 public:
  /// Throws std::invalid_argument for an empty source or delta outside (0, 1].
  StreamingSession(Translator& translator, std::vector<int> source, SessionOptions options);

  /// One READ or WRITE. Throws std::logic_error once the session is done.
  Decision step();
  bool done() const { return done_; }
  bool truncated() const { return truncated_; }

  std::size_t received() const { return j_; }
  std::size_t reads() const { return reads_; }
  std::size_t writes() const { return state_.prefix.size(); }
  const model::DecoderState& state() const { return state_; }
  ReadWriteTrace trace() const;

 private:
  void read();

  Translator& translator_;
  std::vector<int> source_;
  SessionOptions options_;
  std::size_t cap_ = 0;
  std::size_t j_ = 0;
  std::size_t reads_ = 0;
  model::DecoderState state_;
  bool done_ = false;
  bool truncated_ = false;
};

struct SimulationResult {
  std::vector<int> hyp;
  ReadWriteTrace trace;
  std::size_t reads = 0;
  std::size_t writes = 0;
};

/// Runs a session to completion.
SimulationResult run_simultaneous(Translator& translator, std::span<const int> source,
                                  const SessionOptions& options);
SimulationResult run_simultaneous(const model::Model& model, std::span<const int> source,
                                  const SessionOptions& options);

}  // namespace itst::policy
