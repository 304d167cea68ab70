#include "liseco/eval.hpp"
#include "liseco/random.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace liseco;

namespace {

struct Fixture {
  LayeredModel model;
  std::vector<int> layers;
  std::map<int, Probe> probes;
  std::vector<Vector> inputs;
};

// Planted model with probes equal to the planted direction (a calibrated stand-in for trained
// probes) and standard normal inputs.
Fixture fixture(int n = 300, std::uint64_t seed = 1) {
  PlantedModelConfig cfg;
  cfg.m = 8;
  cfg.d = 12;
  cfg.T = 6;
  cfg.seed = seed;
  Fixture f;
  f.model = make_planted_model(cfg);
  f.layers = default_control_layers(cfg.T);
  for (int t : f.layers) f.probes.emplace(t, Probe(t, planted_direction(f.model)));
  Rng rng(seed + 100);
  for (int i = 0; i < n; ++i) f.inputs.push_back(standard_normal(cfg.m, rng));
  return f;
}

}  // namespace

TEST(Eval, GuaranteeAuditIsExactlyOne) {
  const Fixture f = fixture();
  for (const ScoreRange r : {ScoreRange{1e-6, 0.01}, ScoreRange{0.3, 0.5}, ScoreRange{0.99, 1 - 1e-6}}) {
    const ControlPolicy policy{f.layers, f.probes, r};
    const GuaranteeAudit audit = guarantee_audit(f.model, policy, f.inputs, 2);
    ASSERT_EQ(audit.layers.size(), f.layers.size());
    for (const auto& l : audit.layers) {
      EXPECT_EQ(l.in_range_fraction, 1.0);
      EXPECT_EQ(l.post_scores.size(), f.inputs.size());
    }
    EXPECT_EQ(audit.min_in_range_fraction(), 1.0);
  }
}

TEST(Eval, GuaranteeAuditModeOffIsBaseline) {
  const Fixture f = fixture(100);
  const ControlPolicy policy{f.layers, f.probes, ModeOff{}};
  const GuaranteeAudit audit = guarantee_audit(f.model, policy, f.inputs);
  EXPECT_FALSE(audit.band.has_value());
  for (const auto& l : audit.layers) {
    EXPECT_EQ(l.pre_scores, l.post_scores);
    EXPECT_TRUE(std::isnan(l.in_range_fraction));
  }
  const auto with_ref = guarantee_audit(f.model, policy, f.inputs, 1, ScoreRange{1e-9, 1 - 1e-9});
  EXPECT_TRUE(with_ref.band.has_value());
}

TEST(Eval, PinAuditWithinTolerance) {
  const Fixture f = fixture(200);
  const ControlPolicy policy{f.layers, f.probes, PinMode{0.3}};
  const GuaranteeAudit audit = guarantee_audit(f.model, policy, f.inputs);
  for (const auto& l : audit.layers) {
    for (double s : l.post_scores) EXPECT_NEAR(s, 0.3, 1e-6);
    EXPECT_EQ(l.in_range_fraction, 1.0);
  }
}

TEST(Eval, ThresholdAuditUsesUpperBound) {
  const Fixture f = fixture(200);
  const ControlPolicy policy{f.layers, f.probes, ThresholdMode{0.2}};
  const GuaranteeAudit audit = guarantee_audit(f.model, policy, f.inputs);
  EXPECT_EQ(audit.min_in_range_fraction(), 1.0);
  for (const auto& l : audit.layers)
    for (double s : l.post_scores) EXPECT_LE(s, 0.2 + kAuditTolerance);
}

TEST(Eval, SweepSeparatesExtremes) {
  const Fixture f = fixture(500);
  const std::vector<double> alphas{0.01, 0.3, 0.5, 0.7, 0.99};
  const auto ranges = sweep_ranges(alphas, 0.01);
  const SweepResult res = alpha_sweep(f.model, f.probes, f.layers, ranges, f.inputs, 2);
  ASSERT_EQ(res.unsafe_fraction.size(), 5u);
  EXPECT_EQ(res.n, 500u);
  const double gap = res.unsafe_fraction.back() - res.unsafe_fraction.front();
  const double se = std::sqrt(res.unsafe_se.front() * res.unsafe_se.front() + res.unsafe_se.back() * res.unsafe_se.back());
  EXPECT_GT(gap, 3 * se);
  EXPECT_GE(spearman(alphas, res.unsafe_fraction), 0.9);
  for (double v : res.in_range_fraction) EXPECT_EQ(v, 1.0);
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    EXPECT_NEAR(res.unsafe_se[i], std::sqrt(res.unsafe_fraction[i] * (1 - res.unsafe_fraction[i]) / 500.0), 1e-15);
    EXPECT_EQ(res.per_layer[i].size(), f.layers.size());
  }
}

TEST(Eval, SweepRepeatsAndBaseline) {
  const Fixture f = fixture(200);
  const auto ranges = sweep_ranges(std::vector<double>{0.4, 0.4}, 0.05);
  const SweepResult res = alpha_sweep(f.model, f.probes, f.layers, ranges, f.inputs);
  EXPECT_EQ(res.unsafe_fraction[0], res.unsafe_fraction[1]);
  EXPECT_EQ(res.mean_intervention_norm[0], res.mean_intervention_norm[1]);
  std::size_t unsafe = 0;
  for (const auto& in : f.inputs) unsafe += unsafe_decision(forward(f.model, in));
  EXPECT_EQ(res.baseline_unsafe_fraction, static_cast<double>(unsafe) / 200.0);
  EXPECT_THROW(alpha_sweep(f.model, f.probes, f.layers, std::vector<ScoreRange>{}, f.inputs), PreconditionError);
}

TEST(Eval, SweepRangesClampInsideUnitInterval) {
  const auto r = sweep_ranges(std::vector<double>{0.0, 0.5, 1.0}, 0.01);
  EXPECT_EQ(r[0].alpha_min, 1e-6);
  EXPECT_EQ(r[0].alpha_max, 0.01);
  EXPECT_EQ(r[1].alpha_min, 0.49);
  EXPECT_EQ(r[2].alpha_max, 1 - 1e-6);
}

TEST(Eval, Spearman) {
  const std::vector<double> a{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(spearman(a, std::vector<double>{2, 4, 6, 8, 10}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(a, std::vector<double>{5, 4, 3, 2, 1}), -1.0);
  // Ties use average ranks: ranks of b are (1.5, 1.5, 3, 4.5, 4.5).
  const double r = spearman(a, std::vector<double>{0, 0, 0.5, 1, 1});
  EXPECT_NEAR(r, 0.9486832980505138, 1e-12);
  EXPECT_THROW(spearman(std::vector<double>{1}, std::vector<double>{1}), PreconditionError);
}

TEST(Eval, AbstentionOnInRangeInputs) {
  const Fixture f = fixture(400);
  const ControlPolicy policy{f.layers, f.probes, ScoreRange{0.2, 0.8}};
  const auto safe = select_in_range_inputs(f.model, policy, f.inputs);
  ASSERT_GT(safe.size(), 10u);
  const AbstentionReport rep = abstention_report(f.model, policy, safe);
  EXPECT_EQ(rep.abstention_rate, 1.0);
  EXPECT_EQ(rep.max_trajectory_deviation, 0.0);
  EXPECT_EQ(rep.identical_trajectories, safe.size());

  const AbstentionReport mixed = abstention_report(f.model, policy, f.inputs);
  EXPECT_GT(mixed.abstention_rate, 0.0);
  EXPECT_LT(mixed.abstention_rate, 1.0);
}

TEST(Eval, PinAbstainsOnlyAtTarget) {
  const Fixture f = fixture(50);
  const ControlPolicy policy{f.layers, f.probes, PinMode{0.3}};
  const AbstentionReport rep = abstention_report(f.model, policy, f.inputs);
  EXPECT_LT(rep.abstention_rate, 0.05);
}

TEST(Eval, OverheadReport) {
  const Fixture f = fixture(100);
  const ControlPolicy policy{f.layers, f.probes, ScoreRange{0.2, 0.3}};
  const OverheadReport rep = overhead_report(f.model, policy, f.inputs, 8);
  EXPECT_EQ(rep.n_samples, f.inputs.size() * f.layers.size());
  EXPECT_GT(rep.median_forward_ns, 0.0);
  EXPECT_GT(rep.median_intervention_ns, 0.0);
  EXPECT_GT(rep.ratio, 0.0);
  const OverheadReport off = overhead_report(f.model, ControlPolicy{f.layers, f.probes, ModeOff{}}, f.inputs, 8);
  EXPECT_EQ(off.median_intervention_ns, off.median_scoring_ns);
}

TEST(Eval, SweepCsvLayout) {
  const Fixture f = fixture(50);
  const auto ranges = sweep_ranges(std::vector<double>{0.2, 0.8}, 0.01);
  const SweepResult res = alpha_sweep(f.model, f.probes, f.layers, ranges, f.inputs);
  const std::string csv = sweep_csv(res);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "alpha_min,alpha_max,layer,n,unsafe_fraction,unsafe_se,in_range_fraction,"
                  "mean_intervention_norm,abstention_rate");
  std::getline(in, line);
  EXPECT_EQ(line.rfind(",,-1,50,", 0), 0u);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 8);
  }
  EXPECT_EQ(rows, 2 * f.layers.size());
  const Json j = sweep_json(res);
  EXPECT_EQ(j["settings"].size(), 2u);
  EXPECT_EQ(j["n"], 50);
}

TEST(Eval, BinomialSe) {
  EXPECT_EQ(binomial_se(0.0, 100), 0.0);
  EXPECT_DOUBLE_EQ(binomial_se(0.5, 100), 0.05);
  EXPECT_EQ(binomial_se(0.5, 0), 0.0);
}
