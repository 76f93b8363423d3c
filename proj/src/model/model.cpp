#include "itst/model/model.hpp"

#include <cmath>
#include <stdexcept>

#include "itst/errors.hpp"

namespace itst::model {

using transport::TransportMatrix;

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw std::invalid_argument(std::string("model config: ") + name + " must be >= 1");
  };
  positive(vocab_src, "vocab_src");
  positive(vocab_tgt, "vocab_tgt");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(n_layers_enc, "n_layers_enc");
  positive(n_layers_dec, "n_layers_dec");
  positive(ffn_dim, "ffn_dim");
  positive(max_len, "max_len");
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("model config: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (vocab_tgt <= static_cast<std::size_t>(corpus::kEos)) {
    throw std::invalid_argument("model config: vocab_tgt must include the reserved tokens");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_src", vocab_src},       {"vocab_tgt", vocab_tgt},
          {"d_model", d_model},           {"n_heads", n_heads},
          {"n_layers_enc", n_layers_enc}, {"n_layers_dec", n_layers_dec},
          {"ffn_dim", ffn_dim},           {"max_len", max_len},
          {"aggregation", std::string(transport::to_string(aggregation))}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.vocab_src = j.at("vocab_src").get<std::size_t>();
    c.vocab_tgt = j.at("vocab_tgt").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.n_layers_enc = j.at("n_layers_enc").get<std::size_t>();
    c.n_layers_dec = j.at("n_layers_dec").get<std::size_t>();
    c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.aggregation = transport::parse_aggregation(j.value("aggregation", std::string("mean")));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

Binding::Binding(Graph& g, Model& m) : graph_(&g), model_(&m), mutable_model_(&m) {
  vars_.resize(m.params_.size());
}

Binding::Binding(Graph& g, const Model& m) : graph_(&g), model_(&m) {
  vars_.resize(m.params_.size());
}

Var Binding::operator[](std::size_t index) {
  Var& v = vars_.at(index);
  if (!v.valid()) {
    if (mutable_model_ != nullptr && graph_->mode() == GradMode::kRecord) {
      v = graph_->param(mutable_model_->params_[index]);
    } else {
      v = graph_->constant(model_->params_[index].value);
    }
  }
  return v;
}

// ---------------------------------------------------------------------------

namespace {

// splitmix64: a fixed generator so initial weights are identical everywhere.
std::uint64_t next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform(std::uint64_t& state, double bound) {
  const double u = static_cast<double>(next(state) >> 11) * 0x1.0p-53;
  return (2.0 * u - 1.0) * bound;
}

double xavier(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace

std::size_t Model::add_param(std::string name, std::size_t rows, std::size_t cols, double bound,
                             std::uint64_t& state) {
  Parameter p;
  p.name = std::move(name);
  p.value = Tensor(rows, cols);
  for (double& v : p.value.values()) v = uniform(state, bound);
  p.zero_grad();
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

std::size_t Model::add_const_param(std::string name, std::size_t rows, std::size_t cols,
                                   double value) {
  Parameter p;
  p.name = std::move(name);
  p.value = Tensor(rows, cols, value);
  p.zero_grad();
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model, f = config_.ffn_dim;
  std::uint64_t state = seed;
  const double emb = std::sqrt(3.0 / static_cast<double>(d));
  const double sq = xavier(d, d);

  auto attn = [&](const std::string& p) {
    AttnIdx a;
    a.wq = add_param(p + ".wq", d, d, sq, state);
    a.wk = add_param(p + ".wk", d, d, sq, state);
    a.wv = add_param(p + ".wv", d, d, sq, state);
    a.wo = add_param(p + ".wo", d, d, sq, state);
    return a;
  };
  auto ffn = [&](const std::string& p) {
    FfnIdx w;
    w.w1 = add_param(p + ".w1", d, f, xavier(d, f), state);
    w.b1 = add_const_param(p + ".b1", 1, f, 0.0);
    w.w2 = add_param(p + ".w2", f, d, xavier(f, d), state);
    w.b2 = add_const_param(p + ".b2", 1, d, 0.0);
    return w;
  };

  src_embed_ = add_param("src_embed", config_.vocab_src, d, emb, state);
  tgt_embed_ = add_param("tgt_embed", config_.vocab_tgt, d, emb, state);
  for (std::size_t l = 0; l < config_.n_layers_enc; ++l) {
    const std::string p = "enc" + std::to_string(l);
    EncLayer e;
    e.ln1_g = add_const_param(p + ".ln1.gain", 1, d, 1.0);
    e.ln1_b = add_const_param(p + ".ln1.bias", 1, d, 0.0);
    e.self = attn(p + ".self");
    e.ln2_g = add_const_param(p + ".ln2.gain", 1, d, 1.0);
    e.ln2_b = add_const_param(p + ".ln2.bias", 1, d, 0.0);
    e.ffn = ffn(p + ".ffn");
    enc_.push_back(e);
  }
  enc_ln_g_ = add_const_param("enc.ln.gain", 1, d, 1.0);
  enc_ln_b_ = add_const_param("enc.ln.bias", 1, d, 0.0);
  for (std::size_t l = 0; l < config_.n_layers_dec; ++l) {
    const std::string p = "dec" + std::to_string(l);
    DecLayer e;
    e.ln1_g = add_const_param(p + ".ln1.gain", 1, d, 1.0);
    e.ln1_b = add_const_param(p + ".ln1.bias", 1, d, 0.0);
    e.self = attn(p + ".self");
    e.ln2_g = add_const_param(p + ".ln2.gain", 1, d, 1.0);
    e.ln2_b = add_const_param(p + ".ln2.bias", 1, d, 0.0);
    e.cross = attn(p + ".cross");
    e.vq = add_param(p + ".transport.vq", d, d, sq, state);
    e.vk = add_param(p + ".transport.vk", d, d, sq, state);
    e.ln3_g = add_const_param(p + ".ln3.gain", 1, d, 1.0);
    e.ln3_b = add_const_param(p + ".ln3.bias", 1, d, 0.0);
    e.ffn = ffn(p + ".ffn");
    dec_.push_back(e);
  }
  dec_ln_g_ = add_const_param("dec.ln.gain", 1, d, 1.0);
  dec_ln_b_ = add_const_param("dec.ln.bias", 1, d, 0.0);
  out_w_ = add_param("out.w", d, config_.vocab_tgt, xavier(d, config_.vocab_tgt), state);
  out_b_ = add_const_param("out.b", 1, config_.vocab_tgt, 0.0);

  positions_ = Tensor(config_.max_len, d);
  for (std::size_t p = 0; p < config_.max_len; ++p) {
    for (std::size_t k = 0; k < d; k += 2) {
      const double angle =
          static_cast<double>(p) / std::pow(10000.0, static_cast<double>(k) / static_cast<double>(d));
      positions_(p, k) = std::sin(angle);
      if (k + 1 < d) positions_(p, k + 1) = std::cos(angle);
    }
  }
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Parameter& Model::parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named " + std::string(name));
}

const Parameter& Model::parameter(std::string_view name) const {
  return const_cast<Model*>(this)->parameter(name);
}

std::vector<Parameter*> Model::transport_parameters() {
  std::vector<Parameter*> out;
  for (const auto& l : dec_) {
    out.push_back(&params_[l.vq]);
    out.push_back(&params_[l.vk]);
  }
  return out;
}

// ---------------------------------------------------------------------------

Var Model::embed_positions(Binding& b, std::size_t table, std::span<const int> ids,
                           std::size_t vocab) const {
  Graph& g = b.graph();
  if (ids.empty()) throw DimensionError("empty token sequence");
  if (ids.size() > config_.max_len) {
    throw DimensionError("sequence of " + std::to_string(ids.size()) + " tokens exceeds max_len " +
                         std::to_string(config_.max_len));
  }
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
  Var e = g.scale(g.embed(b[table], ids), std::sqrt(static_cast<double>(config_.d_model)));
  return g.add(e, g.constant(positions_.slice_rows(0, ids.size())));
}

Var Model::attention(Binding& b, const AttnIdx& w, Var q_in, Var kv_in, const Mask& mask,
                     std::optional<Var> fusion, std::vector<Var>* alpha_out) const {
  Graph& g = b.graph();
  const std::size_t h = config_.n_heads, dh = config_.d_model / h;
  Var q = g.matmul(q_in, b[w.wq]);
  Var k = g.matmul(kv_in, b[w.wk]);
  Var v = g.matmul(kv_in, b[w.wv]);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(h);
  for (std::size_t i = 0; i < h; ++i) {
    Var qh = g.slice_cols(q, i * dh, dh);
    Var kh = g.slice_cols(k, i * dh, dh);
    Var vh = g.slice_cols(v, i * dh, dh);
    Var alpha = g.softmax_rows(g.scale(g.matmul_nt(qh, kh), inv), &mask);
    if (alpha_out != nullptr) alpha_out->push_back(alpha);
    Var weights = fusion ? transport::fuse_attention(g, alpha, *fusion) : alpha;
    heads.push_back(g.matmul(weights, vh));
  }
  Var cat = h == 1 ? heads[0] : g.concat_cols(heads);
  return g.matmul(cat, b[w.wo]);
}

Var Model::ffn(Binding& b, const FfnIdx& w, Var x) const {
  Graph& g = b.graph();
  Var hidden = g.relu(g.add_row(g.matmul(x, b[w.w1]), b[w.b1]));
  return g.add_row(g.matmul(hidden, b[w.w2]), b[w.b2]);
}

Var Model::encode(Binding& b, std::span<const int> src) const {
  Graph& g = b.graph();
  Var x = embed_positions(b, src_embed_, src, config_.vocab_src);
  const Mask causal = Mask::causal(src.size());
  for (const auto& l : enc_) {
    Var n1 = g.layer_norm(x, b[l.ln1_g], b[l.ln1_b]);
    x = g.add(x, attention(b, l.self, n1, n1, causal, std::nullopt, nullptr));
    Var n2 = g.layer_norm(x, b[l.ln2_g], b[l.ln2_b]);
    x = g.add(x, ffn(b, l.ffn, n2));
  }
  return g.layer_norm(x, b[enc_ln_g_], b[enc_ln_b_]);
}

DecoderOutput Model::decode(Binding& b, Var z, std::span<const int> input,
                            std::span<const std::size_t> limits,
                            const ForwardOptions& opts) const {
  Graph& g = b.graph();
  const std::size_t rows = input.size();
  const std::size_t j = g.value(z).rows();
  if (j == 0) throw DimensionError("decode: empty source states");
  if (limits.size() != rows) {
    throw DimensionError("decode: " + std::to_string(limits.size()) + " cut-points for " +
                         std::to_string(rows) + " target rows");
  }
  for (std::size_t i = 0; i < rows; ++i) {
    if (limits[i] < 1 || limits[i] > j) {
      throw IndexError("cut-point g_" + std::to_string(i + 1) + " = " + std::to_string(limits[i]) +
                       " outside [1, " + std::to_string(j) + "]");
    }
  }
  const Mask self_mask = Mask::causal(rows);
  const Mask cross_mask = Mask::prefix(j, limits);

  DecoderOutput out;
  Var x = embed_positions(b, tgt_embed_, input, config_.vocab_tgt);
  for (const auto& l : dec_) {
    Var n1 = g.layer_norm(x, b[l.ln1_g], b[l.ln1_b]);
    x = g.add(x, attention(b, l.self, n1, n1, self_mask, std::nullopt, nullptr));
    Var q_in = g.layer_norm(x, b[l.ln2_g], b[l.ln2_b]);
    Var t = transport::compute_transport(g, q_in, z, b[l.vq], b[l.vk]);
    out.transport.push_back(t);
    std::optional<Var> fusion;
    if (opts.fuse_transport) {
      fusion = opts.constant_transport ? g.constant(Tensor(rows, j, *opts.constant_transport)) : t;
    }
    out.alpha.emplace_back();
    x = g.add(x, attention(b, l.cross, q_in, z, cross_mask, fusion, &out.alpha.back()));
    Var n3 = g.layer_norm(x, b[l.ln3_g], b[l.ln3_b]);
    x = g.add(x, ffn(b, l.ffn, n3));
  }
  Var h = g.layer_norm(x, b[dec_ln_g_], b[dec_ln_b_]);
  out.logits = g.add_row(g.matmul(h, b[out_w_]), b[out_b_]);
  return out;
}

std::vector<int> Model::decoder_input(std::span<const int> tgt) {
  std::vector<int> in;
  in.reserve(tgt.size());
  in.push_back(corpus::kBos);
  if (!tgt.empty()) in.insert(in.end(), tgt.begin(), tgt.end() - 1);
  return in;
}

TrainForward Model::forward_train(Binding& b, std::span<const Example> batch,
                                  std::span<const std::vector<std::size_t>> g,
                                  const ForwardOptions& opts) const {
  if (batch.empty()) throw DimensionError("forward_train: empty batch");
  if (g.size() != batch.size()) {
    throw DimensionError("forward_train: " + std::to_string(g.size()) + " cut-point rows for " +
                         std::to_string(batch.size()) + " sentences");
  }
  Graph& graph = b.graph();
  TrainForward out;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Example& ex = batch[s];
    if (ex.tgt.empty()) throw DimensionError("forward_train: empty target");
    Var z = encode(b, ex.src);
    const auto input = decoder_input(ex.tgt);
    DecoderOutput d = decode(b, z, input, g[s], opts);
    Var ce = graph.cross_entropy(d.logits, ex.tgt);
    out.ce = out.ce.valid() ? graph.add(out.ce, ce) : ce;
    out.tokens += ex.tgt.size();
    out.transport.push_back(std::move(d.transport));
    out.alpha.push_back(std::move(d.alpha));
  }
  return out;
}

// ---------------------------------------------------------------------------

EncoderStates Model::encode_prefix(std::span<const int> src) const {
  Graph g(GradMode::kInference);
  Binding b(g, *this);
  return EncoderStates{g.value(encode(b, src))};
}

StepOutput Model::decode_step(const DecoderState& state, const EncoderStates& z) const {
  if (z.size() == 0) throw DimensionError("decode_step: empty source states");
  if (state.g.size() != state.prefix.size()) {
    throw DimensionError("decode_step: prefix and cut-points differ in length");
  }
  Graph g(GradMode::kInference);
  Binding b(g, *this);
  std::vector<int> input{corpus::kBos};
  input.insert(input.end(), state.prefix.begin(), state.prefix.end());
  std::vector<std::size_t> limits = state.g;
  limits.push_back(z.size());
  Var zv = g.constant(z.z);
  DecoderOutput d = decode(b, zv, input, limits);

  StepOutput out;
  const std::size_t last = input.size() - 1;
  const auto row = g.value(d.logits).row(last);
  out.logits.assign(row.begin(), row.end());
  std::vector<TransportMatrix> layers;
  for (std::size_t l = 0; l < d.transport.size(); ++l) {
    const auto t = g.value(d.transport[l]).row(last);
    out.transport_rows.emplace_back(t.begin(), t.end());
    layers.push_back(TransportMatrix{Tensor({1, t.size()}, {t.begin(), t.end()}),
                                     static_cast<int>(l)});
    std::vector<double> beta(z.size(), 0.0);
    for (Var a : d.alpha[l]) {
      const auto ar = g.value(a).row(last);
      double norm = 0.0;
      for (std::size_t c = 0; c < ar.size(); ++c) norm += ar[c] * t[c];
      for (std::size_t c = 0; c < ar.size(); ++c) beta[c] += ar[c] * t[c] / norm;
    }
    for (double& v : beta) v /= static_cast<double>(d.alpha[l].size());
    out.beta_rows.push_back(std::move(beta));
  }
  const auto agg = aggregate(layers);
  out.aggregate_row.assign(agg.weights.values().begin(), agg.weights.values().end());
  return out;
}

std::vector<TransportMatrix> Model::transport(const Example& ex) const {
  Graph g(GradMode::kInference);
  Binding b(g, *this);
  Var z = encode(b, ex.src);
  const auto input = decoder_input(ex.tgt);
  std::vector<std::size_t> full(input.size(), ex.src.size());
  DecoderOutput d = decode(b, z, input, full);
  std::vector<TransportMatrix> out;
  for (std::size_t l = 0; l < d.transport.size(); ++l) {
    out.push_back(TransportMatrix{g.value(d.transport[l]), static_cast<int>(l)});
  }
  return out;
}

TransportMatrix Model::aggregate(std::span<const TransportMatrix> layers) const {
  return transport::aggregate_layers(layers, config_.aggregation);
}

Tensor Model::teacher_forced_logits(const Example& ex, std::span<const std::size_t> g,
                                    const ForwardOptions& opts) const {
  Graph graph(GradMode::kInference);
  Binding b(graph, *this);
  Var z = encode(b, ex.src);
  const auto input = decoder_input(ex.tgt);
  return graph.value(decode(b, z, input, g, opts).logits);
}

}  // namespace itst::model
