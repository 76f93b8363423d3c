#pragma once
// Tiny pre-LN encoder-decoder transformer with a causal (unidirectional)
// encoder and transport-fused cross-attention in every decoder layer.
//
// Token conventions: source and target sequences end with EOS; the decoder
// input is BOS followed by the target shifted right by one.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "itst/corpus/corpus.hpp"
#include "itst/tensor/graph.hpp"
#include "itst/transport/transport.hpp"
#include "json.hpp"

namespace itst::model {

struct ModelConfig {
  std::size_t vocab_src = 32;
  std::size_t vocab_tgt = 32;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers_enc = 2;
  std::size_t n_layers_dec = 2;
  std::size_t ffn_dim = 64;
  std::size_t max_len = 256;
  transport::LayerAggregation aggregation = transport::LayerAggregation::kMean;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// One training pair as id sequences; both end with EOS.
struct Example {
  std::vector<int> src;
  std::vector<int> tgt;
};

struct EncoderStates {
  Tensor z;  // j x d_model
  std::size_t size() const { return z.empty() ? 0 : z.rows(); }
};

/// Emitted target prefix (without BOS) and the source count at which each
/// token was written.
struct DecoderState {
  std::vector<int> prefix;
  std::vector<std::size_t> g;
};

struct StepOutput {
  std::vector<double> logits;
  std::vector<std::vector<double>> transport_rows;  // per decoder layer, length j
  std::vector<double> aggregate_row;
  std::vector<std::vector<double>> beta_rows;  // per decoder layer, mean over heads
};

struct ForwardOptions {
  /// When false, cross-attention uses alpha directly (a vanilla transformer).
  bool fuse_transport = true;
  /// Replaces every transport weight used for fusion with this constant.
  std::optional<double> constant_transport;
};

struct DecoderOutput {
  Var logits;                           // I x vocab_tgt
  std::vector<Var> transport;           // per layer, I x J
  std::vector<std::vector<Var>> alpha;  // per layer, per head, I x J
};

struct TrainForward {
  Var ce;  // summed over all target tokens of the batch
  std::size_t tokens = 0;
  std::vector<std::vector<Var>> transport;  // [sentence][layer]
  std::vector<std::vector<std::vector<Var>>> alpha;
};

class Model;

/// Lazily binds model parameters into one graph. A binding made from a
/// mutable model records gradients into the parameters when the graph does;
/// one made from a const model binds constants.
class Binding {
 public:
  Binding(Graph& g, Model& m);
  Binding(Graph& g, const Model& m);

  Var operator[](std::size_t index);
  Graph& graph() { return *graph_; }

 private:
  Graph* graph_;
  const Model* model_;
  Model* mutable_model_ = nullptr;
  std::vector<Var> vars_;
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  Parameter& parameter(std::string_view name);
  const Parameter& parameter(std::string_view name) const;
  /// Decoder-layer V^Q and V^K, the transport projections.
  std::vector<Parameter*> transport_parameters();

  // Graph building.
  Var encode(Binding& b, std::span<const int> src) const;
  /// limits[i] is the number of source states row i may attend to.
  DecoderOutput decode(Binding& b, Var z, std::span<const int> input,
                       std::span<const std::size_t> limits, const ForwardOptions& opts = {}) const;
  /// Teacher-forced pass over a batch; g[s][i] masks cross-attention of target
  /// row i in sentence s to the first g[s][i] source states.
  TrainForward forward_train(Binding& b, std::span<const Example> batch,
                             std::span<const std::vector<std::size_t>> g,
                             const ForwardOptions& opts = {}) const;

  // Tensor-level inference.
  EncoderStates encode_prefix(std::span<const int> src) const;
  StepOutput decode_step(const DecoderState& state, const EncoderStates& z) const;
  /// Per-layer transport of a teacher-forced pass with full source (g = J).
  std::vector<transport::TransportMatrix> transport(const Example& ex) const;
  transport::TransportMatrix aggregate(std::span<const transport::TransportMatrix> layers) const;
  /// Logits of every target row under cut-points g.
  Tensor teacher_forced_logits(const Example& ex, std::span<const std::size_t> g,
                               const ForwardOptions& opts = {}) const;

  static std::vector<int> decoder_input(std::span<const int> tgt);

 private:
  friend class Binding;

  struct AttnIdx {
    std::size_t wq, wk, wv, wo;
  };
  struct FfnIdx {
    std::size_t w1, b1, w2, b2;
  };
  struct EncLayer {
    std::size_t ln1_g, ln1_b, ln2_g, ln2_b;
    AttnIdx self;
    FfnIdx ffn;
  };
  struct DecLayer {
    std::size_t ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
    AttnIdx self, cross;
    std::size_t vq, vk;
    FfnIdx ffn;
  };

  std::size_t add_param(std::string name, std::size_t rows, std::size_t cols, double bound,
                        std::uint64_t& state);
  std::size_t add_const_param(std::string name, std::size_t rows, std::size_t cols, double value);
  Var embed_positions(Binding& b, std::size_t table, std::span<const int> ids,
                      std::size_t vocab) const;
  Var attention(Binding& b, const AttnIdx& w, Var q_in, Var kv_in, const Mask& mask,
                std::optional<Var> fusion, std::vector<Var>* alpha_out) const;
  Var ffn(Binding& b, const FfnIdx& w, Var x) const;

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::size_t src_embed_ = 0, tgt_embed_ = 0;
  std::vector<EncLayer> enc_;
  std::vector<DecLayer> dec_;
  std::size_t enc_ln_g_ = 0, enc_ln_b_ = 0, dec_ln_g_ = 0, dec_ln_b_ = 0;
  std::size_t out_w_ = 0, out_b_ = 0;
  Tensor positions_;
};

// Checkpoints: one JSON document
//   {"magic": "ITST-CKPT", "version": 1, "config": {...}, "step": N,
//    "delta_train": x, "src_vocab": [...], "tgt_vocab": [...],
//    "params": [{"name", "shape", "values"}, ...]}
// written to a temp file and renamed into place.
inline constexpr std::string_view kCheckpointMagic = "ITST-CKPT";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  std::uint64_t step = 0;
  double delta_train = 1.0;
  corpus::Vocabulary src_vocab;
  corpus::Vocabulary tgt_vocab;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model, std::uint64_t step,
                     double delta_train, const corpus::Vocabulary& src_vocab,
                     const corpus::Vocabulary& tgt_vocab);
/// Throws FormatError on a bad magic, version or parameter set.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes text to path atomically (temp file then rename).
void write_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace itst::model
