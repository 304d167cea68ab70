#include "liseco/data.hpp"
#include "liseco/model.hpp"
#include "liseco/probe.hpp"
#include "liseco/random.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace liseco;

namespace {

Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

// Points x ~ N(0, I_d) scored by sigmoid(u^T x) for a random unit u.
struct PlantedSet {
  Vector u;
  std::vector<Vector> xs;
  std::vector<double> scores;
};

PlantedSet planted_set(int d, int n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  PlantedSet s;
  s.u = unit_vector(d, rng);
  for (int i = 0; i < n; ++i) {
    Vector x = scale * standard_normal(d, rng);
    s.scores.push_back(1.0 / (1.0 + std::exp(-s.u.dot(x))));
    s.xs.push_back(std::move(x));
  }
  return s;
}

}  // namespace

TEST(Probe, ScoreExamples) {
  const Probe p(0, v2(1, 0));
  EXPECT_EQ(score(p, v2(0, 0)), 0.5);
  EXPECT_NEAR(score(p, v2(3, 0)), 0.9525741268224334, 1e-15);
  const Probe id(0, v2(2, 5), std::nullopt, Nonlinearity::identity);
  EXPECT_EQ(score(id, v2(1, 1)), 7.0);
}

TEST(Probe, BiasEntersTheLogit) {
  const Probe p(0, v2(1, 0), 0.5, Nonlinearity::identity);
  EXPECT_EQ(p.score(v2(2, 9)), 2.5);
  EXPECT_EQ(p.bias_or_zero(), 0.5);
  EXPECT_FALSE(Probe(0, v2(1, 0)).bias().has_value());
}

TEST(Probe, ScoreRejectsDimensionMismatch) {
  const Probe p(0, v2(1, 0));
  EXPECT_THROW(p.score(Vector::Zero(3)), DimensionError);
}

TEST(Probe, RejectsZeroDirection) {
  EXPECT_THROW(Probe(0, Vector::Zero(4)), ZeroDirectionError);
  EXPECT_THROW(Probe(0, Vector()), DimensionError);
}

TEST(Probe, FromTwoLogit) {
  EXPECT_EQ(from_two_logit(v2(1, 0), v2(0, 1), Nonlinearity::sigmoid).weights(), v2(1, -1));
  EXPECT_EQ(from_two_logit(v2(3, 4), v2(1, 1), Nonlinearity::sigmoid).weights(), v2(2, 3));
  EXPECT_THROW(from_two_logit(v2(3, 4), v2(3, 4), Nonlinearity::sigmoid), ZeroDirectionError);
  EXPECT_THROW(from_two_logit(v2(3, 4), Vector::Zero(3), Nonlinearity::sigmoid), DimensionError);
}

TEST(Probe, TrainConfigValidation) {
  TrainConfig c;
  EXPECT_EQ(c.epochs, 1000);
  EXPECT_EQ(c.learning_rate, 1e-3);
  EXPECT_EQ(c.optimizer, Optimizer::adam);
  c.epochs = 0;
  EXPECT_THROW(c.validate(), PreconditionError);
  c.epochs = 1;
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), PreconditionError);
}

TEST(Probe, TrainRecoversPlantedDirection) {
  const auto s = planted_set(16, 2000, 5, 2.0);
  std::vector<Vector> tx(s.xs.begin(), s.xs.begin() + 1600), vx(s.xs.begin() + 1600, s.xs.end());
  std::vector<double> ts(s.scores.begin(), s.scores.begin() + 1600), vs(s.scores.begin() + 1600, s.scores.end());
  TrainConfig cfg;
  cfg.seed = 3;
  cfg.learning_rate = 1e-2;
  const Probe p = train_probe(tx, ts, cfg, 2);
  EXPECT_EQ(p.layer(), 2);
  const auto labels = binarize(vs);
  EXPECT_GE(probe_accuracy(p, vx, labels), 0.95);
  // Same direction as the plant.
  EXPECT_GT(p.weights().normalized().dot(s.u), 0.9);
  ASSERT_TRUE(p.train_meta().has_value());
  EXPECT_EQ(p.train_meta()->n_examples, 1600u);
  EXPECT_LT(p.train_meta()->final_loss, p.train_meta()->initial_loss);
}

TEST(Probe, TrainingImprovesFitOverEpochs) {
  const auto s = planted_set(8, 400, 9);
  TrainConfig cfg;
  cfg.epochs = 300;
  const auto res = train_probe_detailed(s.xs, s.scores, cfg);
  ASSERT_EQ(res.loss_history.size(), 301u);
  const std::size_t tenth = 30;
  const double first = std::accumulate(res.loss_history.begin(), res.loss_history.begin() + tenth, 0.0);
  const double last = std::accumulate(res.loss_history.end() - tenth, res.loss_history.end(), 0.0);
  EXPECT_LE(last, first);
  EXPECT_LE(res.loss_history.back(), res.loss_history.front());
}

TEST(Probe, SgdAlsoDecreasesLoss) {
  const auto s = planted_set(8, 400, 10);
  TrainConfig cfg;
  cfg.optimizer = Optimizer::sgd;
  cfg.learning_rate = 0.1;
  cfg.epochs = 200;
  const auto res = train_probe_detailed(s.xs, s.scores, cfg);
  EXPECT_LT(res.loss_history.back(), res.loss_history.front());
}

TEST(Probe, TrainingIsSeedDeterministic) {
  const auto s = planted_set(8, 300, 11);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.seed = 17;
  const Probe a = train_probe(s.xs, s.scores, cfg);
  const Probe b = train_probe(s.xs, s.scores, cfg);
  EXPECT_EQ(a.weights(), b.weights());
  EXPECT_EQ(a.bias(), b.bias());
  cfg.seed = 18;
  EXPECT_NE(train_probe(s.xs, s.scores, cfg).weights(), a.weights());
}

TEST(Probe, UninformativeScoresLeaveLossAtLn2) {
  const auto s = planted_set(16, 500, 12);
  const std::vector<double> half(s.xs.size(), 0.5);
  const auto res = train_probe_detailed(s.xs, half, TrainConfig{});
  EXPECT_NEAR(res.loss_history.back(), std::log(2.0), 1e-3);
}

TEST(Probe, TrainingInputErrors) {
  const auto s = planted_set(4, 10, 13);
  const TrainConfig cfg;
  EXPECT_THROW(train_probe(std::vector<Vector>{}, std::vector<double>{}, cfg), PreconditionError);
  EXPECT_THROW(train_probe(s.xs, std::vector<double>(9, 0.5), cfg), DimensionError);
  EXPECT_THROW(train_probe(std::vector<Vector>(1, s.xs[0]), std::vector<double>{0.5}, cfg), PreconditionError);
  auto bad = s.scores;
  bad[3] = 1.5;
  EXPECT_THROW(train_probe(s.xs, bad, cfg), RangeError);
  bad[3] = std::nan("");
  EXPECT_THROW(train_probe(s.xs, bad, cfg), Error);
  auto xs = s.xs;
  xs[2][1] = std::nan("");
  EXPECT_THROW(train_probe(xs, s.scores, cfg), Error);
}

TEST(Probe, NonFiniteLossReportsEpoch) {
  const auto s = planted_set(4, 50, 14, 1e200);
  TrainConfig cfg;
  cfg.optimizer = Optimizer::sgd;
  cfg.learning_rate = 1e300;
  cfg.epochs = 20;
  try {
    train_probe(s.xs, s.scores, cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.epoch(), 0);
  }
}

TEST(Probe, AccuracyExamples) {
  const auto s = planted_set(8, 2000, 15);
  const Probe truth(0, s.u);
  EXPECT_EQ(probe_accuracy(truth, s.xs, binarize(s.scores)), 1.0);

  Rng rng(16);
  std::bernoulli_distribution coin(0.5);
  std::vector<int> labels;
  for (std::size_t i = 0; i < s.xs.size(); ++i) labels.push_back(coin(rng));
  const Probe random(0, unit_vector(8, rng));
  EXPECT_NEAR(probe_accuracy(random, s.xs, labels), 0.5, 0.05);

  EXPECT_THROW(probe_accuracy(truth, std::vector<Vector>{}, std::vector<int>{}), PreconditionError);
  EXPECT_THROW(probe_accuracy(truth, s.xs, std::vector<int>(s.xs.size(), 2)), RangeError);
}
