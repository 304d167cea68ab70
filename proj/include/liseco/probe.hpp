#pragma once

#include "liseco/nonlinearity.hpp"
#include "liseco/types.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace liseco {

enum class Optimizer { adam, sgd };

inline std::string_view to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }

inline std::optional<Optimizer> parse_optimizer(std::string_view s) {
  if (s == "adam") return Optimizer::adam;
  if (s == "sgd") return Optimizer::sgd;
  return std::nullopt;
}

/// Probe fitting hyperparameters. Defaults follow the usual linear-probe recipe:
/// 1000 full-batch Adam epochs at learning rate 1e-3.
struct TrainConfig {
  int epochs = 1000;
  double learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  std::uint64_t seed = 0;
  bool fit_bias = true;

  void validate() const {
    if (epochs < 1) throw PreconditionError("TrainConfig.epochs must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw PreconditionError("TrainConfig.learning_rate must be a positive finite number");
    }
  }
};

/// Provenance recorded alongside a trained probe.
struct TrainMeta {
  TrainConfig config;
  std::size_t n_examples = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// Linear attribute probe f(x) = nu(W^T x + b) for one layer.
class Probe {
 public:
  Probe(int layer, Vector weights, std::optional<double> bias = std::nullopt,
        Nonlinearity nl = Nonlinearity::sigmoid, std::optional<TrainMeta> meta = std::nullopt)
      : layer_(layer), weights_(std::move(weights)), bias_(bias), nl_(nl), meta_(std::move(meta)) {
    if (weights_.size() == 0) throw DimensionError("probe weights are empty");
    if (!weights_.allFinite()) throw Error("probe weights contain non-finite values");
    if (bias_ && !std::isfinite(*bias_)) throw Error("probe bias is not finite");
    norm_sq_ = weights_.squaredNorm();
    if (!(norm_sq_ > 0.0)) {
      throw ZeroDirectionError("probe direction has zero norm (layer " + std::to_string(layer_) +
                               ")");
    }
  }

  int layer() const noexcept { return layer_; }
  Eigen::Index dim() const noexcept { return weights_.size(); }
  const Vector& weights() const noexcept { return weights_; }
  const std::optional<double>& bias() const noexcept { return bias_; }
  double bias_or_zero() const noexcept { return bias_.value_or(0.0); }
  Nonlinearity nonlinearity() const noexcept { return nl_; }
  double norm_sq() const noexcept { return norm_sq_; }
  const std::optional<TrainMeta>& train_meta() const noexcept { return meta_; }

  /// W^T x + b.
  double logit(const Vector& x) const {
    check_dim("probe input", dim(), x.size());
    return weights_.dot(x) + bias_or_zero();
  }

  double score(const Vector& x) const { return apply(nl_, logit(x)); }

 private:
  int layer_;
  Vector weights_;
  std::optional<double> bias_;
  Nonlinearity nl_;
  std::optional<TrainMeta> meta_;
  double norm_sq_ = 0.0;
};

inline double score(const Probe& probe, const Vector& x) { return probe.score(x); }

/// Probe from a two-logit readout: the direction is the difference of the two columns.
inline Probe from_two_logit(const Vector& w1, const Vector& w2, Nonlinearity nl, int layer = 0) {
  check_dim("from_two_logit second column", w1.size(), w2.size());
  Vector w = w1 - w2;
  if (w.squaredNorm() == 0.0) {
    throw ZeroDirectionError("from_two_logit: columns are identical, direction is zero");
  }
  return Probe(layer, std::move(w), std::nullopt, nl);
}

namespace detail {

// softplus(z) - a*z == -a log sigmoid(z) - (1-a) log(1 - sigmoid(z)), computed stably.
inline double cross_entropy_from_logit(double z, double a) {
  const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  return softplus - a * z;
}

inline Matrix stack_rows(std::span<const Vector> acts) {
  const Eigen::Index d = acts.front().size();
  Matrix x(static_cast<Eigen::Index>(acts.size()), d);
  for (std::size_t i = 0; i < acts.size(); ++i) {
    if (acts[i].size() != d) {
      throw DimensionError("activation " + std::to_string(i), static_cast<std::size_t>(d),
                           static_cast<std::size_t>(acts[i].size()));
    }
    if (!acts[i].allFinite()) {
      throw Error("activation " + std::to_string(i) + " contains NaN or infinity");
    }
    x.row(static_cast<Eigen::Index>(i)) = acts[i].transpose();
  }
  return x;
}

}  // namespace detail

/// Mean cross-entropy of a sigmoid probe against soft targets.
inline double mean_cross_entropy(const Probe& probe, std::span<const Vector> acts,
                                 std::span<const double> scores) {
  double total = 0.0;
  for (std::size_t i = 0; i < acts.size(); ++i) {
    total += detail::cross_entropy_from_logit(probe.logit(acts[i]), scores[i]);
  }
  return total / static_cast<double>(acts.size());
}

struct TrainResult {
  Probe probe;
  /// Mean loss evaluated before each epoch's update, followed by the final loss.
  std::vector<double> loss_history;
};

/// Fits a sigmoid probe to (activation, score) pairs by full-batch minimization of the mean
/// cross-entropy between the scores and the probe output.
inline TrainResult train_probe_detailed(std::span<const Vector> acts, std::span<const double> scores,
                                        const TrainConfig& cfg, int layer = 0) {
  cfg.validate();
  if (acts.empty()) throw PreconditionError("train_probe: empty training data");
  if (acts.size() != scores.size()) {
    throw DimensionError("train_probe: scores vs activations", acts.size(), scores.size());
  }
  if (acts.size() < 2) throw PreconditionError("train_probe: need at least 2 examples");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw Error("train_probe: score " + std::to_string(i) + " is NaN");
    if (scores[i] < 0.0 || scores[i] > 1.0) {
      throw RangeError("train_probe: score " + std::to_string(i) + " outside [0, 1]");
    }
  }

  const Matrix x = detail::stack_rows(acts);
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Map<const Eigen::VectorXd> target(scores.data(), n);
  const double inv_n = 1.0 / static_cast<double>(n);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  Vector w(d);
  for (Eigen::Index j = 0; j < d; ++j) w[j] = normal(rng);
  double b = 0.0;

  // Adam moments; default PyTorch constants.
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Vector m_w = Vector::Zero(d), v_w = Vector::Zero(d);
  double m_b = 0.0, v_b = 0.0;
  double beta1_pow = 1.0, beta2_pow = 1.0;

  auto mean_loss = [&](const Vector& z) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) total += detail::cross_entropy_from_logit(z[i], target[i]);
    return total * inv_n;
  };

  std::vector<double> history;
  history.reserve(static_cast<std::size_t>(cfg.epochs) + 1);
  Vector z(n), resid(n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    z.noalias() = x * w;
    z.array() += b;
    const double loss = mean_loss(z);
    if (!std::isfinite(loss)) throw TrainingError("train_probe: non-finite loss", epoch);
    history.push_back(loss);

    for (Eigen::Index i = 0; i < n; ++i) resid[i] = sigmoid(z[i]) - target[i];
    Vector grad_w = (x.transpose() * resid) * inv_n;
    const double grad_b = cfg.fit_bias ? resid.sum() * inv_n : 0.0;

    if (cfg.optimizer == Optimizer::sgd) {
      w -= cfg.learning_rate * grad_w;
      b -= cfg.learning_rate * grad_b;
    } else {
      beta1_pow *= beta1;
      beta2_pow *= beta2;
      m_w = beta1 * m_w + (1.0 - beta1) * grad_w;
      v_w = beta2 * v_w + (1.0 - beta2) * grad_w.cwiseProduct(grad_w);
      const double lr_t = cfg.learning_rate / (1.0 - beta1_pow);
      const double bc2 = 1.0 - beta2_pow;
      w.array() -= lr_t * m_w.array() / ((v_w.array() / bc2).sqrt() + eps);
      if (cfg.fit_bias) {
        m_b = beta1 * m_b + (1.0 - beta1) * grad_b;
        v_b = beta2 * v_b + (1.0 - beta2) * grad_b * grad_b;
        b -= lr_t * m_b / (std::sqrt(v_b / bc2) + eps);
      }
    }
    if (!w.allFinite() || !std::isfinite(b)) {
      throw TrainingError("train_probe: parameters became non-finite", epoch);
    }
  }
  z.noalias() = x * w;
  z.array() += b;
  const double final_loss = mean_loss(z);
  if (!std::isfinite(final_loss)) throw TrainingError("train_probe: non-finite loss", cfg.epochs);
  history.push_back(final_loss);

  if (w.squaredNorm() == 0.0) {
    throw TrainingError("train_probe: weights collapsed to the zero direction", cfg.epochs);
  }
  TrainMeta meta{cfg, static_cast<std::size_t>(n), history.front(), final_loss};
  std::optional<double> bias;
  if (cfg.fit_bias) bias = b;
  return {Probe(layer, std::move(w), bias, Nonlinearity::sigmoid, meta), std::move(history)};
}

inline Probe train_probe(std::span<const Vector> acts, std::span<const double> scores,
                         const TrainConfig& cfg, int layer = 0) {
  return train_probe_detailed(acts, scores, cfg, layer).probe;
}

/// Labels are 1 where score > 0.5.
inline std::vector<int> binarize(std::span<const double> scores) {
  std::vector<int> labels(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) labels[i] = scores[i] > 0.5 ? 1 : 0;
  return labels;
}

/// Fraction of examples where (score > 0.5) agrees with the binary label.
inline double probe_accuracy(const Probe& probe, std::span<const Vector> acts,
                             std::span<const int> labels) {
  if (acts.empty()) throw PreconditionError("probe_accuracy: empty evaluation set");
  if (acts.size() != labels.size()) {
    throw DimensionError("probe_accuracy: labels vs activations", acts.size(), labels.size());
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < acts.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw RangeError("probe_accuracy: label " + std::to_string(i) + " is not 0 or 1");
    }
    const int predicted = probe.score(acts[i]) > 0.5 ? 1 : 0;
    if (predicted == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(acts.size());
}

}  // namespace liseco
