#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "itst/errors.hpp"
#include "itst/model/model.hpp"
#include "itst/tensor/grad_check.hpp"

namespace {

using itst::model::DecoderState;
using itst::model::Example;
using itst::model::Model;
using itst::model::ModelConfig;

ModelConfig small_config(std::size_t d = 16, std::size_t layers = 2) {
  ModelConfig c;
  c.vocab_src = 12;
  c.vocab_tgt = 10;
  c.d_model = d;
  c.n_heads = 2;
  c.n_layers_enc = layers;
  c.n_layers_dec = layers;
  c.ffn_dim = 2 * d;
  c.max_len = 64;
  return c;
}

std::vector<int> random_ids(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::vector<int> ids(n);
  for (auto& v : ids) v = 4 + static_cast<int>(rng() % (vocab - 4));
  ids.back() = itst::corpus::kEos;
  return ids;
}

std::vector<std::size_t> random_monotone_g(std::mt19937_64& rng, std::size_t i, std::size_t j) {
  std::vector<std::size_t> g(i);
  std::size_t cur = 1 + rng() % j;
  for (auto& v : g) {
    cur = std::min(j, cur + rng() % 2);
    v = cur;
  }
  return g;
}

bool rows_equal(const itst::Tensor& a, const itst::Tensor& b, std::size_t rows) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < a.cols(); ++c)
      if (a(r, c) != b(r, c)) return false;
  return true;
}

TEST(ModelConfig, Validation) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.ffn_dim = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(ModelConfig::from_json(small_config().to_json()), small_config());
}

TEST(EncodePrefix, PrefixStableBitwise) {
  Model m(small_config(), 3);
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 10; ++rep) {
    auto src = random_ids(rng, 2 + rng() % 10, 12);
    auto full = m.encode_prefix(src);
    for (std::size_t j = 1; j < src.size(); ++j) {
      auto part = m.encode_prefix(std::span<const int>(src).first(j));
      ASSERT_EQ(part.size(), j);
      EXPECT_TRUE(rows_equal(part.z, full.z, j)) << "prefix " << j;
    }
  }
}

TEST(EncodePrefix, SingleTokenAndSharedFirstToken) {
  Model m(small_config(), 4);
  auto one = m.encode_prefix(std::vector<int>{5});
  EXPECT_EQ(one.z.rows(), 1u);
  EXPECT_EQ(one.z.cols(), 16u);
  EXPECT_TRUE(one.z.all_finite());
  auto a = m.encode_prefix(std::vector<int>{5, 6, 7});
  auto b = m.encode_prefix(std::vector<int>{5, 9});
  EXPECT_TRUE(rows_equal(a.z, b.z, 1));
}

TEST(EncodePrefix, Errors) {
  Model m(small_config(), 4);
  EXPECT_THROW(m.encode_prefix(std::vector<int>{}), itst::DimensionError);
  EXPECT_THROW(m.encode_prefix(std::vector<int>{12}), itst::IndexError);
  EXPECT_THROW(m.encode_prefix(std::vector<int>{-1}), itst::IndexError);
}

TEST(DecodeStep, DeterministicAndNormalizable) {
  Model m(small_config(), 5);
  auto z = m.encode_prefix(std::vector<int>{5, 6, 7, 2});
  DecoderState s{{4, 5}, {1, 3}};
  auto a = m.decode_step(s, z), b = m.decode_step(s, z);
  ASSERT_EQ(a.logits.size(), 10u);
  EXPECT_EQ(a.logits, b.logits);
  double mx = *std::max_element(a.logits.begin(), a.logits.end()), sum = 0;
  for (double v : a.logits) sum += std::exp(v - mx);
  double total = 0;
  for (double v : a.logits) total += std::exp(v - mx) / sum;
  EXPECT_NEAR(total, 1.0, 1e-12);
  ASSERT_EQ(a.transport_rows.size(), 2u);
  EXPECT_EQ(a.transport_rows[0].size(), 4u);
  EXPECT_EQ(a.aggregate_row.size(), 4u);
  for (const auto& beta : a.beta_rows) {
    double t = 0;
    for (double v : beta) t += v;
    EXPECT_NEAR(t, 1.0, 1e-12);
  }
}

TEST(DecodeStep, Errors) {
  Model m(small_config(), 5);
  auto z = m.encode_prefix(std::vector<int>{5, 6});
  EXPECT_THROW(m.decode_step(DecoderState{}, itst::model::EncoderStates{}), itst::DimensionError);
  EXPECT_THROW(m.decode_step(DecoderState{{4}, {}}, z), itst::DimensionError);
  EXPECT_THROW(m.decode_step(DecoderState{{4}, {3}}, z), itst::IndexError);
}

TEST(DecodeStep, IncrementalMatchesTeacherForced) {
  Model m(small_config(), 6);
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 8; ++rep) {
    Example ex{random_ids(rng, 2 + rng() % 8, 12), random_ids(rng, 1 + rng() % 8, 10)};
    auto g = random_monotone_g(rng, ex.tgt.size(), ex.src.size());
    auto teacher = m.teacher_forced_logits(ex, g);
    DecoderState s;
    for (std::size_t i = 0; i < ex.tgt.size(); ++i) {
      auto z = m.encode_prefix(std::span<const int>(ex.src).first(g[i]));
      auto step = m.decode_step(s, z);
      double worst = 0;
      for (std::size_t c = 0; c < step.logits.size(); ++c)
        worst = std::max(worst, std::fabs(step.logits[c] - teacher(i, c)));
      EXPECT_LE(worst, 1e-9);
      s.prefix.push_back(ex.tgt[i]);
      s.g.push_back(g[i]);
    }
  }
}

TEST(DecodeStep, FullSourceAfterGrowthEqualsDirect) {
  Model m(small_config(), 7);
  std::vector<int> src{5, 6, 7, 8, 2};
  DecoderState s{{4, 6}, {5, 5}};
  auto direct = m.decode_step(s, m.encode_prefix(src));
  itst::model::EncoderStates grown;
  for (std::size_t j = 1; j <= src.size(); ++j) grown = m.encode_prefix(std::span<const int>(src).first(j));
  EXPECT_EQ(m.decode_step(s, grown).logits, direct.logits);
}

TEST(DecodeStep, TransportRowsMatchFullPass) {
  Model m(small_config(), 8);
  Example ex{{5, 6, 7, 2}, {4, 5, 2}};
  auto layers = m.transport(ex);
  ASSERT_EQ(layers.size(), 2u);
  DecoderState s{{4, 5}, {4, 4}};
  auto step = m.decode_step(s, m.encode_prefix(ex.src));
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(step.transport_rows[l][c], layers[l].weights(2, c));
  auto agg = m.aggregate(layers);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(step.aggregate_row[c], agg.weights(2, c), 1e-15);
}

TEST(Forward, ConstantTransportEqualsVanilla) {
  Model m(small_config(), 9);
  Example ex{{5, 6, 7, 8, 2}, {4, 7, 5, 2}};
  std::vector<std::size_t> g{2, 3, 5, 5};
  itst::model::ForwardOptions constant, vanilla;
  constant.constant_transport = 0.37;
  vanilla.fuse_transport = false;
  auto a = m.teacher_forced_logits(ex, g, constant);
  auto b = m.teacher_forced_logits(ex, g, vanilla);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
  auto fused = m.teacher_forced_logits(ex, g);
  double diff = 0;
  for (std::size_t k = 0; k < a.size(); ++k) diff = std::max(diff, std::fabs(fused[k] - b[k]));
  EXPECT_GT(diff, 1e-6);
}

double batch_ce(Model& m, const std::vector<Example>& batch,
                const std::vector<std::vector<std::size_t>>& g) {
  itst::Graph graph(itst::GradMode::kInference);
  itst::model::Binding b(graph, m);
  return graph.value(m.forward_train(b, batch, g).ce)[0];
}

TEST(ForwardTrain, FullCutPointsMatchUnmaskedLogits) {
  Model m(small_config(), 10);
  std::vector<Example> batch{{{5, 6, 7, 2}, {4, 5, 2}}};
  std::vector<std::vector<std::size_t>> g{{4, 4, 4}};
  const double ce = batch_ce(m, batch, g);
  auto logits = m.teacher_forced_logits(batch[0], g[0]);
  double expect = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    double mx = -1e300, s = 0;
    for (std::size_t c = 0; c < logits.cols(); ++c) mx = std::max(mx, logits(i, c));
    for (std::size_t c = 0; c < logits.cols(); ++c) s += std::exp(logits(i, c) - mx);
    expect += -(logits(i, static_cast<std::size_t>(batch[0].tgt[i])) - mx - std::log(s));
  }
  EXPECT_NEAR(ce, expect, 1e-10);
}

TEST(ForwardTrain, Errors) {
  Model m(small_config(), 10);
  std::vector<Example> batch{{{5, 6, 2}, {4, 2}}};
  std::vector<std::vector<std::size_t>> bad{{4, 1}};
  EXPECT_THROW(batch_ce(m, batch, bad), itst::IndexError);
  std::vector<std::vector<std::size_t>> zero{{0, 1}};
  EXPECT_THROW(batch_ce(m, batch, zero), itst::IndexError);
  std::vector<std::vector<std::size_t>> shortg{{1}};
  EXPECT_THROW(batch_ce(m, batch, shortg), itst::DimensionError);
}

TEST(ForwardTrain, SgdStepDecreasesCe) {
  Model m(small_config(), 11);
  std::vector<Example> batch{{{5, 6, 7, 2}, {6, 5, 4, 2}}};
  std::vector<std::vector<std::size_t>> g{{2, 3, 4, 4}};
  const double before = batch_ce(m, batch, g);
  {
    itst::Graph graph;
    itst::model::Binding b(graph, m);
    graph.backward(m.forward_train(b, batch, g).ce);
  }
  for (auto& p : m.parameters())
    for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] -= 1e-3 * p.grad[k];
  EXPECT_LT(batch_ce(m, batch, g), before);
}

TEST(ForwardTrain, GradCheckEndToEnd) {
  auto c = small_config(8, 2);
  Model m(c, 12);
  std::vector<Example> batch{{{5, 6, 7, 2}, {4, 7, 2}}, {{8, 9, 2}, {6, 5, 4, 2}}};
  std::vector<std::vector<std::size_t>> g{{1, 3, 4}, {2, 2, 3, 3}};
  auto f = [&](itst::Graph& graph) {
    itst::model::Binding b(graph, m);
    return m.forward_train(b, batch, g).ce;
  };
  std::vector<itst::Parameter*> params;
  for (auto& p : m.parameters()) params.push_back(&p);
  auto r = itst::grad_check(f, params, 1e-5, 1e-3);
  EXPECT_TRUE(r.passed) << r.worst_parameter << "[" << r.worst_index << "] rel " << r.max_rel_error;
}

class TempDir {
 public:
  TempDir() : path_(std::filesystem::temp_directory_path() / ("itst_model_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)))) {
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::filesystem::path file(const char* name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

TEST(Checkpoint, RoundTripBitwise) {
  TempDir dir;
  Model m(small_config(), 13);
  auto src = itst::corpus::Vocabulary::from_tokens({"<pad>", "<s>", "</s>", "<unk>", "a", "b"});
  auto tgt = itst::corpus::Vocabulary::from_tokens({"<pad>", "<s>", "</s>", "<unk>", "x"});
  m.parameters()[3].value[0] = 0.1 + 0.2;
  itst::model::save_checkpoint(dir.file("m.ckpt"), m, 42, 0.75, src, tgt);
  auto ck = itst::model::load_checkpoint(dir.file("m.ckpt"));
  EXPECT_EQ(ck.step, 42u);
  EXPECT_EQ(ck.delta_train, 0.75);
  EXPECT_EQ(ck.src_vocab, src);
  EXPECT_EQ(ck.tgt_vocab, tgt);
  EXPECT_EQ(ck.model.config(), m.config());
  for (std::size_t i = 0; i < m.parameters().size(); ++i)
    EXPECT_EQ(ck.model.parameters()[i].value, m.parameters()[i].value) << m.parameters()[i].name;
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++files;
  EXPECT_EQ(files, 1u);
}

TEST(Checkpoint, RejectsBadFiles) {
  TempDir dir;
  EXPECT_THROW(itst::model::load_checkpoint(dir.file("missing")), itst::FormatError);
  std::ofstream(dir.file("junk")) << "not json";
  EXPECT_THROW(itst::model::load_checkpoint(dir.file("junk")), itst::FormatError);
  std::ofstream(dir.file("magic")) << R"({"magic":"NOPE","version":1})";
  EXPECT_THROW(itst::model::load_checkpoint(dir.file("magic")), itst::FormatError);
  std::ofstream(dir.file("ver")) << R"({"magic":"ITST-CKPT","version":9})";
  EXPECT_THROW(itst::model::load_checkpoint(dir.file("ver")), itst::FormatError);
}

TEST(Model, SameSeedSameParameters) {
  Model a(small_config(), 21), b(small_config(), 21), c(small_config(), 22);
  EXPECT_EQ(a.parameters()[0].value, b.parameters()[0].value);
  EXPECT_FALSE(a.parameters()[0].value == c.parameters()[0].value);
}

}  // namespace
