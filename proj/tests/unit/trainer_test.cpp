#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "itst/errors.hpp"
#include "itst/tensor/grad_check.hpp"
#include "itst/trainer/trainer.hpp"

namespace {

using itst::trainer::CurriculumSchedule;
using itst::trainer::ScheduleMode;
using itst::trainer::TrainConfig;
using itst::transport::TransportMatrix;

CurriculumSchedule curriculum(double d) {
  CurriculumSchedule s;
  s.decay = d;
  return s;
}

TEST(DeltaTrain, CurriculumExamples) {
  auto s = curriculum(400);
  EXPECT_EQ(itst::trainer::delta_train(s, 0), 1.0);
  EXPECT_NEAR(itst::trainer::delta_train(s, 400), 0.5 + 0.5 / std::exp(1.0), 1e-15);
  EXPECT_NEAR(itst::trainer::delta_train(s, 0), 1.0, 0.0);
  EXPECT_NEAR(itst::trainer::delta_train(s, 50 * 400), 0.5, 1e-9);
}

TEST(DeltaTrain, CurriculumMonotoneAndBounded) {
  for (double d : {1.0, 37.0, 1000.0}) {
    auto s = curriculum(d);
    double prev = 2.0;
    for (std::uint64_t n = 0; n < 2000; ++n) {
      const double v = itst::trainer::delta_train(s, n);
      EXPECT_LE(v, prev);
      EXPECT_GE(v, s.delta_min);
      EXPECT_LE(v, 1.0);
      prev = v;
    }
  }
}

TEST(DeltaTrain, OtherModes) {
  CurriculumSchedule s;
  s.decay = 10;
  s.mode = ScheduleMode::kFixed;
  s.fixed_delta = 0.7;
  EXPECT_EQ(itst::trainer::delta_train(s, 123), 0.7);
  s.mode = ScheduleMode::kFullSentence;
  EXPECT_EQ(itst::trainer::delta_train(s, 5), 1.0);
  s.mode = ScheduleMode::kRandom;
  s.seed = 9;
  double lo = 1, hi = 0;
  for (std::uint64_t n = 0; n < 500; ++n) {
    const double v = itst::trainer::delta_train(s, n);
    EXPECT_EQ(v, itst::trainer::delta_train(s, n));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_GE(lo, 0.5);
  EXPECT_LE(hi, 1.0);
  EXPECT_LT(lo, 0.55);
  EXPECT_GT(hi, 0.95);
}

TEST(DeltaTrain, ScheduleValidation) {
  CurriculumSchedule s;
  EXPECT_THROW(s.validate(), std::invalid_argument);  // decay unset
  s.decay = 5;
  EXPECT_NO_THROW(s.validate());
  s.delta_min = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  EXPECT_EQ(itst::trainer::parse_schedule_mode("random"), ScheduleMode::kRandom);
  EXPECT_THROW(itst::trainer::parse_schedule_mode("sometimes"), itst::FormatError);
}

TransportMatrix matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return TransportMatrix{itst::Tensor({rows, cols}, std::move(v))};
}

TEST(ComputeGTrain, Examples) {
  auto fig = matrix(1, 5, {0.15, 0.28, 0.02, 0.33, 0.22});
  EXPECT_EQ(itst::trainer::compute_g_train(fig, 0.7), (std::vector<std::size_t>{4}));
  auto quarter = matrix(1, 4, {0.25, 0.25, 0.25, 0.25});
  EXPECT_EQ(itst::trainer::compute_g_train(quarter, 1.0), (std::vector<std::size_t>{4}));
  auto low = matrix(2, 3, {0.1, 0.1, 0.1, 0.9, 0.05, 0.05});
  EXPECT_EQ(itst::trainer::compute_g_train(low, 0.5), (std::vector<std::size_t>{3, 1}));
}

TEST(ComputeGTrain, Errors) {
  EXPECT_THROW(itst::trainer::compute_g_train(TransportMatrix{}, 0.5), itst::DimensionError);
  auto m = matrix(1, 2, {0.5, 0.5});
  EXPECT_THROW(itst::trainer::compute_g_train(m, 0.0), std::invalid_argument);
  EXPECT_THROW(itst::trainer::compute_g_train(m, 1.5), std::invalid_argument);
}

TransportMatrix random_matrix(std::mt19937_64& rng) {
  const std::size_t i = 1 + rng() % 12, j = 1 + rng() % 12;
  std::uniform_real_distribution<double> u(0.0, 1.0 / static_cast<double>(j) * 2.0);
  itst::Tensor t(i, j);
  for (double& v : t.values()) v = u(rng);
  return TransportMatrix{t};
}

TEST(ComputeGTrain, MatchesExhaustiveScan) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ud(0.01, 1.0);
  for (int rep = 0; rep < 500; ++rep) {
    auto t = random_matrix(rng);
    const double delta = ud(rng);
    auto g = itst::trainer::compute_g_train(t, delta);
    for (std::size_t i = 0; i < t.target_len(); ++i) {
      // smallest j over all candidates whose prefix sum reaches delta
      std::size_t expect = t.source_len();
      for (std::size_t j = t.source_len(); j >= 1; --j) {
        double s = 0;
        for (std::size_t l = 0; l < j; ++l) s += t.weights(i, l);
        if (s >= delta) expect = j;
      }
      EXPECT_EQ(g[i], expect);
    }
  }
}

TEST(ComputeGTrain, MonotoneInDelta) {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 200; ++rep) {
    auto t = random_matrix(rng);
    std::vector<std::size_t> prev(t.target_len(), 0);
    for (double d = 0.05; d <= 1.0; d += 0.05) {
      auto g = itst::trainer::compute_g_train(t, d);
      for (std::size_t i = 0; i < g.size(); ++i) EXPECT_GE(g[i], prev[i]);
      prev = g;
    }
  }
}

itst::model::ModelConfig tiny_model(std::size_t vocab, std::size_t d = 8) {
  itst::model::ModelConfig c;
  c.vocab_src = vocab;
  c.vocab_tgt = vocab;
  c.d_model = d;
  c.n_heads = 2;
  c.n_layers_enc = 2;
  c.n_layers_dec = 2;
  c.ffn_dim = 2 * d;
  c.max_len = 64;
  return c;
}

struct Toy {
  itst::corpus::ParallelCorpus corpus;
  itst::corpus::Vocabulary src, tgt;
  std::vector<itst::model::Example> examples;
};

Toy copy_task(std::size_t pairs, std::size_t vocab) {
  Toy t;
  t.corpus = itst::corpus::synth_task(itst::corpus::SynthKind::kCopy, pairs, {3, 8}, vocab, 1);
  t.src = itst::corpus::Vocabulary::build(t.corpus.sources());
  t.tgt = itst::corpus::Vocabulary::build(t.corpus.targets());
  t.examples = itst::trainer::make_examples(t.corpus, t.src, t.tgt);
  return t;
}

TEST(ItstLoss, TermsNonNegativeAndWeighted) {
  auto toy = copy_task(4, 16);
  itst::model::Model m(tiny_model(toy.src.size()), 2);
  TrainConfig cfg;
  auto g = itst::trainer::batch_cut_points(m, toy.examples, ScheduleMode::kCurriculum, 0.6);
  itst::Graph graph(itst::GradMode::kInference);
  itst::model::Binding b(graph, m);
  auto l = itst::trainer::itst_loss(b, m, toy.examples, g, cfg);
  const double ce = graph.value(l.ce)[0], lat = graph.value(l.latency)[0],
               nrm = graph.value(l.norm)[0];
  EXPECT_GE(ce, 0);
  EXPECT_GE(lat, 0);
  EXPECT_GE(nrm, 0);
  EXPECT_NEAR(graph.value(l.total)[0], ce + lat + nrm, 1e-12);

  cfg.w_latency = 0;
  cfg.w_norm = 0;
  auto pure = itst::trainer::itst_loss(b, m, toy.examples, g, cfg);
  EXPECT_EQ(graph.value(pure.total)[0], graph.value(pure.ce)[0]);
}

TEST(ItstLoss, GradCheckWithFrozenCutPoints) {
  auto toy = copy_task(2, 12);
  itst::model::Model m(tiny_model(toy.src.size()), 3);
  TrainConfig cfg;
  auto g = itst::trainer::batch_cut_points(m, toy.examples, ScheduleMode::kCurriculum, 0.6);
  auto f = [&](itst::Graph& graph) {
    itst::model::Binding b(graph, m);
    return itst::trainer::itst_loss(b, m, toy.examples, g, cfg).total;
  };
  std::vector<itst::Parameter*> params;
  for (auto& p : m.parameters()) params.push_back(&p);
  auto r = itst::grad_check(f, params, 1e-5, 1e-3);
  EXPECT_TRUE(r.passed) << r.worst_parameter << "[" << r.worst_index << "] rel " << r.max_rel_error;
}

TEST(ItstLoss, EveryTermReachesTransportProjections) {
  auto toy = copy_task(3, 12);
  itst::model::Model m(tiny_model(toy.src.size()), 4);
  TrainConfig cfg;
  auto g = itst::trainer::batch_cut_points(m, toy.examples, ScheduleMode::kCurriculum, 0.6);
  for (int term = 0; term < 3; ++term) {
    cfg.w_ce = term == 0;
    cfg.w_latency = term == 1;
    cfg.w_norm = term == 2;
    itst::Graph graph;
    itst::model::Binding b(graph, m);
    graph.backward(itst::trainer::itst_loss(b, m, toy.examples, g, cfg).total);
    for (auto* p : m.transport_parameters()) {
      double mx = 0;
      for (double v : p->grad.values()) mx = std::max(mx, std::fabs(v));
      EXPECT_GT(mx, 0.0) << "term " << term << " " << p->name;
    }
  }
}

TEST(Trainer, CopyTaskCeHalvesIn200Steps) {
  auto toy = copy_task(50, 16);
  auto mc = tiny_model(toy.src.size(), 32);
  mc.n_heads = 4;
  mc.ffn_dim = 64;
  itst::model::Model m(mc, 1);
  TrainConfig cfg;
  cfg.max_updates = 200;
  cfg.lr = 2e-3;
  itst::trainer::Trainer t(m, cfg);
  auto h = t.run(toy.examples);
  ASSERT_EQ(h.size(), 200u);
  EXPECT_LE(h.back().ce, 0.5 * h.front().ce) << h.front().ce << " -> " << h.back().ce;
  for (const auto& l : h) {
    EXPECT_GE(l.ce, 0);
    EXPECT_GE(l.latency, 0);
    EXPECT_GE(l.norm, 0);
  }
}

TEST(Trainer, RepeatedRunsAreBitIdentical) {
  auto toy = copy_task(10, 12);
  TrainConfig cfg;
  cfg.max_updates = 15;
  cfg.batch_size = 4;
  cfg.lr = 1e-3;
  cfg.schedule.mode = ScheduleMode::kRandom;
  std::ostringstream log_a, log_b;
  itst::model::Model a(tiny_model(toy.src.size()), 5), b(tiny_model(toy.src.size()), 5);
  itst::trainer::Trainer(a, cfg).run(toy.examples, &log_a);
  itst::trainer::Trainer(b, cfg).run(toy.examples, &log_b);
  EXPECT_EQ(log_a.str(), log_b.str());
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value);
}

TEST(Trainer, LogLinesHaveAllFields) {
  auto toy = copy_task(3, 12);
  TrainConfig cfg;
  cfg.max_updates = 3;
  std::ostringstream log;
  itst::model::Model m(tiny_model(toy.src.size()), 6);
  itst::trainer::Trainer(m, cfg).run(toy.examples, &log);
  std::istringstream in(log.str());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<int>(), n++);
    for (const char* k : {"ce", "latency", "norm", "delta_train"}) EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_EQ(n, 3);
}

TEST(Trainer, NonFiniteLossAborts) {
  auto toy = copy_task(2, 12);
  itst::model::Model m(tiny_model(toy.src.size()), 7);
  m.parameter("out.w").value[0] = std::numeric_limits<double>::infinity();
  TrainConfig cfg;
  cfg.max_updates = 1;
  itst::trainer::Trainer t(m, cfg);
  try {
    t.train_step(toy.examples, 17);
    FAIL();
  } catch (const itst::NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("step 17"), std::string::npos) << e.what();
  }
}

TEST(Trainer, EmptyBatchRejected) {
  itst::model::Model m(tiny_model(12), 7);
  TrainConfig cfg;
  itst::trainer::Trainer t(m, cfg);
  EXPECT_THROW(t.train_step({}, 0), itst::DimensionError);
}

TEST(TrainConfig, DefaultsAndValidation) {
  TrainConfig c;
  c.max_updates = 500;
  c.default_decay();
  EXPECT_EQ(c.schedule.decay, 100.0);
  EXPECT_NO_THROW(c.validate());
  c.lr = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(ConfigFile, ParsesKeysAndRejectsJunk) {
  const auto dir = std::filesystem::temp_directory_path() / "itst_trainer_cfg";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "ok.cfg") << "# toy\nlr = 0.002\nbatch_size=4  # inline\n\n"
                                     "schedule = fixed\nfixed_delta = 0.6\ncost_form = upper\n"
                                     "d_model = 16\naggregation = last\n";
    std::ofstream(dir / "bad.cfg") << "lr = 0.1\nwhat = 3\n";
    std::ofstream(dir / "nan.cfg") << "lr = fast\n";
    std::ofstream(dir / "noeq.cfg") << "lr 0.1\n";
  }
  TrainConfig t;
  itst::model::ModelConfig m;
  auto keys = itst::trainer::read_config_file(dir / "ok.cfg", t, m);
  EXPECT_EQ(keys.size(), 7u);
  EXPECT_EQ(t.lr, 0.002);
  EXPECT_EQ(t.batch_size, 4u);
  EXPECT_EQ(t.schedule.mode, ScheduleMode::kFixed);
  EXPECT_EQ(t.schedule.fixed_delta, 0.6);
  EXPECT_EQ(t.cost_form, itst::transport::CostForm::kUpperTriangular);
  EXPECT_EQ(m.d_model, 16u);
  EXPECT_EQ(m.aggregation, itst::transport::LayerAggregation::kLast);
  try {
    itst::trainer::read_config_file(dir / "bad.cfg", t, m);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("bad.cfg:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(itst::trainer::read_config_file(dir / "nan.cfg", t, m), std::invalid_argument);
  EXPECT_THROW(itst::trainer::read_config_file(dir / "noeq.cfg", t, m), std::invalid_argument);
  EXPECT_THROW(itst::trainer::read_config_file(dir / "missing.cfg", t, m), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

}  // namespace
