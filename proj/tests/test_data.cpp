#include "liseco/data.hpp"
#include "liseco/model.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

using namespace liseco;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "liseco_test_data";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

LayeredModel model(std::uint64_t seed = 2) {
  PlantedModelConfig cfg;
  cfg.seed = seed;
  return make_planted_model(cfg);
}

}  // namespace

TEST(Data, NoiseFreeScoresAreRecomputable) {
  const LayeredModel m = model();
  const auto data = generate_constraint_set(m, ScoringFunction::planted(m), 200, 5);
  ASSERT_EQ(data.size(), 200u);
  const Vector u = planted_direction(m);
  for (const auto& e : data) {
    EXPECT_EQ(e.features.size(), m.m());
    const double z = u.dot(forward(m, e.features).states.back());
    EXPECT_EQ(e.score, sigmoid(z));
  }
}

TEST(Data, BinarizedLabelsAreBalanced) {
  const LayeredModel m = model(3);
  const auto data = generate_constraint_set(m, ScoringFunction::planted(m, 0.0, ScorerShape::binarized), 2000, 6);
  double ones = 0;
  for (const auto& e : data) {
    EXPECT_TRUE(e.score == 0.0 || e.score == 1.0);
    ones += e.score;
  }
  EXPECT_NEAR(ones / 2000.0, 0.5, 0.05);
}

TEST(Data, GenerationIsSeedDeterministicAndJobIndependent) {
  const LayeredModel m = model();
  const auto scorer = ScoringFunction::planted(m, 1.0);
  const auto a = generate_constraint_set(m, scorer, 300, 9, 1);
  const auto b = generate_constraint_set(m, scorer, 300, 9, 4);
  const auto c = generate_constraint_set(m, scorer, 300, 10, 1);
  ASSERT_EQ(a.size(), b.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].features, b[i].features);
    EXPECT_EQ(a[i].score, b[i].score);
    any_diff = any_diff || a[i].score != c[i].score;
  }
  EXPECT_TRUE(any_diff);
  const auto one = generate_constraint_set(m, scorer, 1, 9);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].features, a[0].features);
}

TEST(Data, NoisyScorerCoversTheInterior) {
  const LayeredModel m = model(4);
  const auto data = generate_constraint_set(m, ScoringFunction::planted(m, 1.0), 2000, 7);
  std::vector<int> bins(9, 0);
  double lo = 1.0, hi = 0.0;
  for (const auto& e : data) {
    lo = std::min(lo, e.score);
    hi = std::max(hi, e.score);
    if (e.score > 0.05 && e.score < 0.95) ++bins[std::min(8, static_cast<int>((e.score - 0.05) / 0.1))];
  }
  EXPECT_LT(lo, 0.05);
  EXPECT_GT(hi, 0.95);
  for (int b : bins) EXPECT_GT(b, 0);
}

TEST(Data, ScorerValidation) {
  const LayeredModel m = model();
  ScoringFunction s = ScoringFunction::planted(m);
  EXPECT_NEAR(s.direction.norm(), 1.0, 1e-12);
  s.direction *= 2.0;
  EXPECT_THROW(s.validate(), PreconditionError);
  s = ScoringFunction::planted(m, -1.0);
  EXPECT_THROW(s.validate(), PreconditionError);
  EXPECT_THROW(generate_constraint_set(m, ScoringFunction::planted(m), 0, 1), PreconditionError);
}

TEST(Data, SplitSizesAndPartition) {
  std::vector<int> v(10);
  std::iota(v.begin(), v.end(), 0);
  const auto [a, b] = split(v, 0.8, 3);
  EXPECT_EQ(a.size(), 8u);
  EXPECT_EQ(b.size(), 2u);
  std::vector<int> all(a);
  all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, v);
  EXPECT_EQ(split(v, 0.8, 3), split(v, 0.8, 3));
  EXPECT_EQ(split(std::vector<int>(7, 1), 0.5, 1).first.size(), 3u);
}

TEST(Data, SplitErrors) {
  EXPECT_THROW(split(std::vector<int>{}, 0.8, 1), PreconditionError);
  EXPECT_THROW(split(std::vector<int>{1, 2}, 0.0, 1), PreconditionError);
  EXPECT_THROW(split(std::vector<int>{1, 2}, 1.0, 1), PreconditionError);
}

TEST(Data, JsonlRoundTripIsLossless) {
  const LayeredModel m = model();
  auto data = generate_constraint_set(m, ScoringFunction::planted(m, 1.0), 100, 8);
  data[0].features[0] = 0.1;
  data[1].features[0] = 1e-300;
  data[2].features[0] = -123456789.123456789;
  data[3].score = 1.0;
  data[4].score = 0.0;
  const fs::path p = temp_file("roundtrip.jsonl");
  save_constraint_set(data, p);
  const auto back = load_constraint_set(p);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].features, data[i].features);
    EXPECT_EQ(back[i].score, data[i].score);
  }
  // Saving the loaded set reproduces the bytes.
  const fs::path q = temp_file("roundtrip2.jsonl");
  save_constraint_set(back, q);
  std::ifstream a(p), b(q);
  std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);
}

TEST(Data, EmptyFileIsEmptySet) {
  const fs::path p = temp_file("empty.jsonl");
  write_file(p, "");
  EXPECT_TRUE(load_constraint_set(p).empty());
}

TEST(Data, LoadErrorsReportLine) {
  const fs::path p = temp_file("bad.jsonl");
  auto expect_line = [&](const std::string& text, const std::string& where) {
    write_file(p, text);
    try {
      load_constraint_set(p);
      FAIL() << "no error for: " << text;
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find(where), std::string::npos) << e.what();
    }
  };
  expect_line("{\"features\":[1,2],\"score\":0.5}\n{\"features\":[1,2],\"score\":1.5}\n", ":2:");
  expect_line("{\"features\":[1,2],\"score\":0.5}\n\n{\"features\":[1],\"score\":0.5}\n", ":3:");
  expect_line("{\"features\":[1,2],\"score\":0.5\n", ":1:");
  expect_line("{\"features\":[1,\"a\"],\"score\":0.5}\n", ":1:");
  expect_line("[1,2]\n", ":1:");
  expect_line("{\"features\":[1,2],\"score\":-0.1}\n", "score");
  EXPECT_THROW(load_constraint_set(temp_file("does_not_exist.jsonl")), Error);
}

TEST(Data, FeatureAndScoreViews) {
  std::vector<ConstraintExample> data{{Vector::Ones(2), 0.25}, {Vector::Zero(2), 0.75}};
  EXPECT_EQ(features_of(data)[0], Vector::Ones(2));
  EXPECT_EQ(scores_of(data), (std::vector<double>{0.25, 0.75}));
}
