#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gprcov/harness/gradcheck.hpp"
#include "gprcov/models/checkpoint.hpp"
#include "gprcov/models/model.hpp"

using namespace gprcov;
using namespace gprcov::models;

namespace {

template <typename Real>
Tensor<Real> random_images(std::size_t n, std::size_t h, std::size_t w, Rng& rng) {
  Tensor<Real> x({n, 1, h, w});
  for (auto& v : x.values()) v = static_cast<Real>(rng.uniform());
  return x;
}

ModelConfig full(Variant v) {
  ModelConfig c;
  c.variant = v;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("gprcov_test_models_" + name);
}

}  // namespace

TEST(ModelConfig, DefaultChains) {
  EXPECT_EQ(full(Variant::rcnet).resolved_spd_dims(), (std::vector<std::size_t>{64, 58, 54, 44, 32}));
  EXPECT_EQ(full(Variant::srcnet).resolved_spd_dims(), (std::vector<std::size_t>{256, 235, 217, 179, 128}));
  EXPECT_EQ(full(Variant::srcnet).covariance_dim(), 256u);
}

TEST(ModelConfig, Validation) {
  auto c = full(Variant::rcnet);
  c.spd_dims = {64, 70, 32};
  EXPECT_THROW(c.validate(), ConfigError);
  c.spd_dims = {60, 32};
  EXPECT_THROW(c.validate(), ConfigError);
  c = full(Variant::rcnet);
  c.num_classes = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = full(Variant::rcnet);
  c.reeig_eps = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_variant("resnet"), ConfigError);
  EXPECT_EQ(parse_variant("srcnet"), Variant::srcnet);
}

TEST(ModelConfig, JsonRoundTrip) {
  auto c = harness::mini_model_config(Variant::srcnet);
  const nlohmann::json j = c;
  const auto back = j.get<ModelConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
}

TEST(Model, RcnetShapeChain) {
  Model<float> m(full(Variant::rcnet), 1);
  EXPECT_EQ(m.spd_chain_dims(), (std::vector<std::size_t>{64, 58, 54, 44, 32}));
  EXPECT_EQ(m.vectorized_length(), 528u);
}

TEST(Model, SrcnetShapeChain) {
  Model<float> m(full(Variant::srcnet), 1);
  EXPECT_EQ(m.spd_chain_dims(), (std::vector<std::size_t>{256, 235, 217, 179, 128}));
  EXPECT_EQ(m.vectorized_length(), 8256u);
}

TEST(Model, ForwardTraceHasDeclaredShapes) {
  Model<float> m(full(Variant::rcnet), 2);
  Rng rng(3);
  m.forward_train(random_images<float>(2, 112, 60, rng), TrainForward{true, false, nullptr});
  const auto& cache = m.last_cache();
  ASSERT_EQ(cache.spd.size(), 2u);
  const std::vector<std::size_t> dims{64, 58, 58, 54, 54, 44, 44, 32, 32};
  ASSERT_EQ(cache.spd[0].chain.size(), dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i) {
    EXPECT_EQ(static_cast<std::size_t>(cache.spd[0].chain[i].dim()), dims[i]);
  }
}

TEST(Model, ProbabilitiesSumToOne) {
  for (Variant v : {Variant::scnn, Variant::rcnet, Variant::srcnet}) {
    Model<float> m(full(v), 4);
    Rng rng(5);
    const auto p = m.predict_proba(random_images<float>(2, 112, 60, rng));
    ASSERT_EQ(p.shape(), (Shape{2, 4}));
    for (std::size_t b = 0; b < 2; ++b) {
      float s = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_GE(p(b, k), 0.0f);
        s += p(b, k);
      }
      EXPECT_NEAR(s, 1.0f, 1e-5f) << to_string(v);
    }
  }
}

TEST(Model, ZeroClassifierGivesUniformProbabilities) {
  for (Variant v : {Variant::scnn, Variant::rcnet}) {
    Model<double> m(harness::mini_model_config(v), 6);
    for (auto& p : m.parameters()) {
      if (p.name.rfind("fc.", 0) == 0) nn::param_value(p.handle).fill(0.0);
    }
    Rng rng(7);
    const auto p = m.predict_proba(random_images<double>(3, 16, 12, rng));
    for (double v2 : p.values()) EXPECT_NEAR(v2, 1.0 / 3.0, 1e-15);
  }
}

TEST(Model, EvalIsDeterministicAndDropoutOnlyInTraining) {
  auto cfg = harness::mini_model_config(Variant::rcnet);
  cfg.dropout_rate = 0.5;
  Model<double> m(cfg, 8);
  Rng rng(9);
  const auto x = random_images<double>(4, 16, 12, rng);
  EXPECT_EQ(m.logits(x), m.logits(x));
  Rng d1(1), d2(2);
  const auto a = m.forward_train(x, TrainForward{false, false, &d1});
  const auto b = m.forward_train(x, TrainForward{false, false, &d2});
  EXPECT_NE(a, b);
  EXPECT_EQ(m.forward_train(x, TrainForward{false, false, nullptr}), m.logits(x));
}

TEST(Model, SameSeedSameWeights) {
  Model<float> a(harness::mini_model_config(Variant::srcnet), 11), b(harness::mini_model_config(Variant::srcnet), 11);
  auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(nn::param_value(pa[i].handle), nn::param_value(pb[i].handle));
}

TEST(Model, BimapWeightsStartOnTheManifold) {
  Model<double> m(full(Variant::srcnet), 12);
  int seen = 0;
  for (auto& p : m.parameters()) {
    if (std::holds_alternative<optim::StiefelParam<double>*>(p.handle)) {
      EXPECT_LT(optim::stiefel_residual<double>(nn::param_value(p.handle).matrix()), 1e-12);
      ++seen;
    }
  }
  EXPECT_EQ(seen, 4);
}

TEST(Model, WrongInputShape) {
  Model<float> m(harness::mini_model_config(Variant::rcnet), 1);
  EXPECT_THROW(m.logits(Tensor<float>({1, 1, 15, 12})), DimensionError);
}

TEST(CrossEntropy, UniformLogits) {
  const Tensor<double> logits({1, 4});
  const std::vector<int> y{2};
  const auto r = nn::cross_entropy<double>(logits, y);
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-15);
  EXPECT_NEAR(r.grad_logits(0, 2), -0.75, 1e-15);
  EXPECT_NEAR(r.grad_logits(0, 0), 0.25, 1e-15);
}

TEST(CrossEntropy, StableForLargeLogits) {
  const Tensor<double> logits({1, 3}, {1000.0, 0.0, -1000.0});
  const std::vector<int> y{0};
  const auto r = nn::cross_entropy<double>(logits, y);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(13);
  Tensor<double> logits({3, 5});
  for (auto& v : logits.values()) v = 3 * rng.normal();
  const std::vector<int> y{4, 0, 2};
  const auto r = nn::cross_entropy<double>(logits, y);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    auto plus = logits, minus = logits;
    plus[i] += 1e-6;
    minus[i] -= 1e-6;
    const double fd = (nn::cross_entropy<double>(plus, y).loss - nn::cross_entropy<double>(minus, y).loss) / 2e-6;
    EXPECT_NEAR(r.grad_logits[i], fd, 1e-8);
  }
}

TEST(CrossEntropy, Errors) {
  const Tensor<double> logits({2, 3});
  const std::vector<int> bad{0, 3}, short_labels{0};
  EXPECT_THROW(nn::cross_entropy<double>(logits, bad), ConfigError);
  EXPECT_THROW(nn::cross_entropy<double>(logits, short_labels), DimensionError);
}

TEST(Model, SmallSgdStepDecreasesLoss) {
  for (Variant v : {Variant::scnn, Variant::rcnet, Variant::srcnet}) {
    Model<double> m(harness::mini_model_config(v), 14);
    Rng rng(15);
    const auto x = random_images<double>(6, 16, 12, rng);
    const std::vector<int> y{0, 1, 2, 0, 1, 2};
    const TrainForward fwd{true, false, nullptr};
    const auto before = nn::cross_entropy<double>(m.forward_train(x, fwd), y);
    m.zero_grad();
    m.backward(before.grad_logits);
    optim::OptimizerConfig cfg;
    cfg.learning_rate = 1e-4;
    cfg.momentum = 0.0;
    optim::sgd_step<double>(m.handles(), m.gradients(), cfg);
    const auto after = nn::cross_entropy<double>(m.forward_train(x, fwd), y);
    EXPECT_LT(after.loss, before.loss) << to_string(v);
  }
}

TEST(ModelGradcheck, MiniatureModels) {
  harness::GradcheckOptions opts;
  opts.trials = 5;
  for (const auto& name : harness::gradcheck_model_names()) {
    const auto r = harness::run_gradcheck_one(name, opts);
    EXPECT_TRUE(r.passed) << name << " worst " << r.worst;
  }
}

TEST(Checkpoint, RoundTripIsBitwise) {
  for (Variant v : {Variant::scnn, Variant::rcnet, Variant::srcnet}) {
    Model<float> m(harness::mini_model_config(v), 16);
    Rng rng(17);
    const auto x = random_images<float>(3, 16, 12, rng);
    // Move running statistics away from their initial values.
    m.forward_train(x, TrainForward{true, true, nullptr});
    const auto path = temp_path("rt.ckpt");
    save_checkpoint(path.string(), m, {{"note", "x"}});
    auto loaded = load_checkpoint<float>(path.string());
    EXPECT_EQ(loaded.extra.at("note"), "x");
    EXPECT_EQ(loaded.model.logits(x), m.logits(x));
    EXPECT_EQ(checkpoint_bytes(loaded.model, loaded.extra), checkpoint_bytes(m, {{"note", "x"}}));
    std::filesystem::remove(path);
  }
}

TEST(Checkpoint, CorruptInputs) {
  Model<float> m(harness::mini_model_config(Variant::rcnet), 18);
  auto bytes = checkpoint_bytes(m);
  const auto path = temp_path("bad.ckpt");
  auto write = [&](const std::vector<char>& b) {
    std::ofstream f(path, std::ios::binary);
    f.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  auto bad = bytes;
  bad[0] = 'X';
  write(bad);
  EXPECT_THROW(load_checkpoint<float>(path.string()), BadMagicError);
  write(std::vector<char>(bytes.begin(), bytes.end() - 5));
  EXPECT_THROW(load_checkpoint<float>(path.string()), FormatError);
  bad = bytes;
  bad.push_back(0);
  write(bad);
  EXPECT_THROW(load_checkpoint<float>(path.string()), FormatError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint<float>(path.string()), IoError);
}
