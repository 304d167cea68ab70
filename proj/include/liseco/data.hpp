#pragma once

#include "liseco/json_format.hpp"
#include "liseco/model.hpp"
#include "liseco/nonlinearity.hpp"
#include "liseco/parallel.hpp"
#include "liseco/random.hpp"
#include "liseco/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace liseco {

/// One (input, attribute score) pair of the constraint set.
struct ConstraintExample {
  Vector features;
  double score = 0.0;
};

enum class ScorerShape { sigmoidal, binarized };

inline std::string_view to_string(ScorerShape s) {
  return s == ScorerShape::sigmoidal ? "sigmoidal" : "binarized";
}

inline std::optional<ScorerShape> parse_scorer_shape(std::string_view s) {
  if (s == "sigmoidal") return ScorerShape::sigmoidal;
  if (s == "binarized") return ScorerShape::binarized;
  return std::nullopt;
}

/// Ground-truth attribute of the final state: sigmoid(u^T x_T + noise), optionally thresholded.
struct ScoringFunction {
  Vector direction;
  double noise_sd = 0.0;
  ScorerShape shape = ScorerShape::sigmoidal;

  void validate() const {
    if (std::abs(direction.norm() - 1.0) > 1e-12) {
      throw PreconditionError("scoring direction must be a unit vector");
    }
    if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) {
      throw PreconditionError("scoring noise_sd must be finite and >= 0");
    }
  }

  static ScoringFunction planted(const LayeredModel& model, double noise_sd = 0.0,
                                 ScorerShape shape = ScorerShape::sigmoidal) {
    return {planted_direction(model), noise_sd, shape};
  }

  double operator()(const Vector& final_state, double noise = 0.0) const {
    const double z = direction.dot(final_state) + noise;
    if (shape == ScorerShape::binarized) return z > 0.0 ? 1.0 : 0.0;
    return sigmoid(z);
  }
};

/// n examples with standard normal features, scored through the model's final state.
/// Example i draws from its own seed-derived stream, so results do not depend on `jobs`.
inline std::vector<ConstraintExample> generate_constraint_set(const LayeredModel& model,
                                                              const ScoringFunction& scorer,
                                                              std::size_t n, std::uint64_t seed,
                                                              unsigned jobs = 1) {
  if (n < 1) throw PreconditionError("generate_constraint_set: n must be >= 1");
  scorer.validate();
  check_dim("scoring direction", model.d(), scorer.direction.size());
  std::vector<ConstraintExample> out(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    Rng rng = substream(seed, i);
    Vector features = standard_normal(model.m(), rng);
    double noise = 0.0;
    if (scorer.noise_sd > 0.0) noise = std::normal_distribution<double>(0.0, scorer.noise_sd)(rng);
    const Trajectory traj = forward(model, features);
    out[i] = {std::move(features), scorer(traj.states.back(), noise)};
  });
  return out;
}

/// Seeded shuffle into (first floor(n * train_frac), remainder).
template <typename T>
std::pair<std::vector<T>, std::vector<T>> split(std::span<const T> data, double train_frac,
                                                 std::uint64_t seed) {
  if (data.empty()) throw PreconditionError("split: empty input");
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw PreconditionError("split: train_frac must lie in (0, 1)");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(data.size()) * train_frac));
  std::pair<std::vector<T>, std::vector<T>> parts;
  parts.first.reserve(n_train);
  parts.second.reserve(data.size() - n_train);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? parts.first : parts.second).push_back(data[order[i]]);
  }
  return parts;
}

template <typename T>
std::pair<std::vector<T>, std::vector<T>> split(const std::vector<T>& data, double train_frac,
                                                 std::uint64_t seed) {
  return split(std::span<const T>(data), train_frac, seed);
}

inline std::vector<Vector> features_of(std::span<const ConstraintExample> data) {
  std::vector<Vector> out;
  out.reserve(data.size());
  for (const auto& e : data) out.push_back(e.features);
  return out;
}

inline std::vector<double> scores_of(std::span<const ConstraintExample> data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& e : data) out.push_back(e.score);
  return out;
}

// JSONL: one {"features": [...], "score": f} object per line.

inline std::string constraint_line(const ConstraintExample& e) {
  std::string line = "{\"features\":[";
  for (Eigen::Index j = 0; j < e.features.size(); ++j) {
    if (j) line += ',';
    line += format_double(e.features[j]);
  }
  line += "],\"score\":";
  line += format_double(e.score);
  line += '}';
  return line;
}

inline void save_constraint_set(std::span<const ConstraintExample> data,
                                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& e : data) out << constraint_line(e) << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

inline std::vector<ConstraintExample> load_constraint_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<ConstraintExample> data;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      fail(std::string("malformed JSON (") + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("features") || !j.contains("score")) {
      fail("expected an object with \"features\" and \"score\"");
    }
    const Json& f = j["features"];
    if (!f.is_array()) fail("field \"features\" must be an array");
    if (!j["score"].is_number()) fail("field \"score\" must be a number");
    ConstraintExample e;
    e.features.resize(static_cast<Eigen::Index>(f.size()));
    for (std::size_t k = 0; k < f.size(); ++k) {
      if (!f[k].is_number()) fail("field \"features\" must contain only numbers");
      e.features[static_cast<Eigen::Index>(k)] = f[k].get<double>();
    }
    if (!e.features.allFinite()) fail("field \"features\" contains non-finite values");
    e.score = j["score"].get<double>();
    if (!(e.score >= 0.0 && e.score <= 1.0)) fail("field \"score\" outside [0, 1]");
    if (!data.empty() && data.front().features.size() != e.features.size()) {
      fail("inconsistent feature dimension " + std::to_string(e.features.size()) + " (expected " +
           std::to_string(data.front().features.size()) + ")");
    }
    data.push_back(std::move(e));
  }
  return data;
}

}  // namespace liseco
