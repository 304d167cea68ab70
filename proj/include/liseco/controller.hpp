#pragma once

#include "liseco/nonlinearity.hpp"
#include "liseco/probe.hpp"
#include "liseco/types.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

namespace liseco {

/// Allowed score interval [alpha_min, alpha_max]. alpha_min == alpha_max is the pin case.
struct ScoreRange {
  double alpha_min = 0.0;
  double alpha_max = 1.0;

  void validate(Nonlinearity nl) const {
    require_inside_image(nl, alpha_min, "alpha_min");
    require_inside_image(nl, alpha_max, "alpha_max");
    if (alpha_min > alpha_max) throw RangeError("alpha_min exceeds alpha_max");
  }
  bool contains(double score) const { return score >= alpha_min && score <= alpha_max; }
};

enum class InterventionCase { above_max, below_min, none, pinned, budgeted, loreft };

inline std::string_view to_string(InterventionCase c) {
  switch (c) {
    case InterventionCase::above_max: return "above_max";
    case InterventionCase::below_min: return "below_min";
    case InterventionCase::none: return "none";
    case InterventionCase::pinned: return "pinned";
    case InterventionCase::budgeted: return "budgeted";
    case InterventionCase::loreft: return "loreft";
  }
  return "unknown";
}

inline std::optional<InterventionCase> parse_intervention_case(std::string_view s) {
  for (auto c : {InterventionCase::above_max, InterventionCase::below_min, InterventionCase::none,
                 InterventionCase::pinned, InterventionCase::budgeted, InterventionCase::loreft}) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

/// Additive control input for one layer. case_ == none exactly when theta is the zero vector.
struct Intervention {
  Vector theta;
  InterventionCase kind = InterventionCase::none;
  double norm = 0.0;
  int layer = 0;

  static Intervention zero(Eigen::Index d, int layer) {
    return {Vector::Zero(d), InterventionCase::none, 0.0, layer};
  }

  /// Downgrades to `none` when theta is exactly zero.
  static Intervention make(Vector theta, InterventionCase kind, int layer) {
    const double n = theta.norm();
    if (n == 0.0) kind = InterventionCase::none;
    return {std::move(theta), kind, n, layer};
  }

  bool triggered() const noexcept { return kind != InterventionCase::none; }
};

enum class BudgetDirection { decrease, increase };

inline std::string_view to_string(BudgetDirection d) {
  return d == BudgetDirection::decrease ? "decrease" : "increase";
}

inline std::optional<BudgetDirection> parse_budget_direction(std::string_view s) {
  if (s == "decrease") return BudgetDirection::decrease;
  if (s == "increase") return BudgetDirection::increase;
  return std::nullopt;
}

/// Squared-norm cap for the budgeted controller.
struct Budget {
  double beta = 1.0;
  BudgetDirection direction = BudgetDirection::decrease;

  void validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) {
      throw PreconditionError("budget beta must be a positive finite number");
    }
  }
};

namespace detail {

enum class Side { upper, lower, exact };

/// ((target - b) - W^T x) / ||W||^2 * W.
///
/// For a one-sided bound the coefficient is then nudged inward in rounding-sized steps until
/// the score of x + theta, computed the same way as the trigger test, satisfies the bound.
inline Vector move_to_level(const Probe& probe, const Vector& x, double offset, double wx,
                            Side side, double bound) {
  const Vector& w = probe.weights();
  const double norm_sq = probe.norm_sq();
  double coef = (offset - wx) / norm_sq;
  Vector theta = coef * w;
  if (side == Side::exact) return theta;
  const double inward = side == Side::upper ? -1.0 : 1.0;
  double step = 0.0;
  for (int i = 0; i < 64; ++i) {
    const double s = apply(probe.nonlinearity(), w.dot(x + theta) + probe.bias_or_zero());
    if (side == Side::upper ? s <= bound : s >= bound) break;
    step = i == 0 ? std::numeric_limits<double>::epsilon() *
                        (std::abs(offset) + std::abs(wx) + x.cwiseAbs().maxCoeff() + 1.0) / norm_sq
                  : 2.0 * step;
    coef += inward * step;
    theta = coef * w;
  }
  return theta;
}

}  // namespace detail

/// Minimum-norm theta keeping nu(W^T(x + theta) + b) inside `range`.
/// Boundary scores count as in range; the comparison is exact.
inline Intervention intervene_range(const Probe& probe, const Vector& x, const ScoreRange& range) {
  range.validate(probe.nonlinearity());
  check_dim("intervene_range activation", probe.dim(), x.size());
  const double wx = probe.weights().dot(x);
  const double s = apply(probe.nonlinearity(), wx + probe.bias_or_zero());
  if (s > range.alpha_max) {
    const double target = inverse_score(probe.nonlinearity(), range.alpha_max, "alpha_max");
    return Intervention::make(detail::move_to_level(probe, x, target - probe.bias_or_zero(), wx,
                                                    detail::Side::upper, range.alpha_max),
                              InterventionCase::above_max, probe.layer());
  }
  if (s < range.alpha_min) {
    const double target = inverse_score(probe.nonlinearity(), range.alpha_min, "alpha_min");
    return Intervention::make(detail::move_to_level(probe, x, target - probe.bias_or_zero(), wx,
                                                    detail::Side::lower, range.alpha_min),
                              InterventionCase::below_min, probe.layer());
  }
  return Intervention::zero(x.size(), probe.layer());
}

/// One-sided variant: only scores strictly above p are pulled back to p.
inline Intervention intervene_threshold(const Probe& probe, const Vector& x, double p) {
  const double target = inverse_score(probe.nonlinearity(), p, "p");
  check_dim("intervene_threshold activation", probe.dim(), x.size());
  const double wx = probe.weights().dot(x);
  const double s = apply(probe.nonlinearity(), wx + probe.bias_or_zero());
  if (s > p) {
    return Intervention::make(
        detail::move_to_level(probe, x, target - probe.bias_or_zero(), wx, detail::Side::upper, p),
        InterventionCase::above_max, probe.layer());
  }
  return Intervention::zero(x.size(), probe.layer());
}

/// Sets the score to exactly p whatever the current score.
inline Intervention intervene_pin(const Probe& probe, const Vector& x, double p) {
  const double target = inverse_score(probe.nonlinearity(), p, "p");
  check_dim("intervene_pin activation", probe.dim(), x.size());
  const double wx = probe.weights().dot(x);
  return Intervention::make(
      detail::move_to_level(probe, x, target - probe.bias_or_zero(), wx, detail::Side::exact, p),
      InterventionCase::pinned, probe.layer());
}

/// Largest score change achievable with ||theta||^2 <= beta.
///
/// theta = +-sqrt(beta) * W / ||W||; `decrease` takes the minus sign.
inline Intervention intervene_budget(const Probe& probe, const Budget& budget) {
  budget.validate();
  const double sign = budget.direction == BudgetDirection::decrease ? -1.0 : 1.0;
  Vector theta = (sign * std::sqrt(budget.beta) / std::sqrt(probe.norm_sq())) * probe.weights();
  return Intervention::make(std::move(theta), InterventionCase::budgeted, probe.layer());
}

/// theta = M x + beta with M = -W W^T / ||W||^2 in triggered cases, zero otherwise.
struct AffineMap {
  Matrix M;
  Vector beta;
  InterventionCase kind = InterventionCase::none;

  /// Evaluates M x + beta through the rank-one factors of M, with the same floating-point
  /// feasibility step as intervene_range, so the two agree bit for bit.
  Vector apply(const Vector& x) const {
    check_dim("AffineMap::apply input", M.cols(), x.size());
    if (kind == InterventionCase::none) return Vector::Zero(x.size());
    const auto side = kind == InterventionCase::above_max ? detail::Side::upper : detail::Side::lower;
    return detail::move_to_level(*probe_, x, offset_, probe_->weights().dot(x), side, bound_);
  }

  /// Plain dense M x + beta; agrees with apply() up to rounding.
  Vector apply_dense(const Vector& x) const {
    check_dim("AffineMap::apply_dense input", M.cols(), x.size());
    return M * x + beta;
  }

 private:
  friend AffineMap affine_form(const Probe&, const Vector&, const ScoreRange&);
  std::optional<Probe> probe_;
  double offset_ = 0.0;
  double bound_ = 0.0;
};

inline AffineMap affine_form(const Probe& probe, const Vector& x, const ScoreRange& range) {
  range.validate(probe.nonlinearity());
  check_dim("affine_form activation", probe.dim(), x.size());
  const Eigen::Index d = x.size();
  const double s = probe.score(x);
  AffineMap map;
  double bound;
  if (s > range.alpha_max) {
    map.kind = InterventionCase::above_max;
    bound = range.alpha_max;
  } else if (s < range.alpha_min) {
    map.kind = InterventionCase::below_min;
    bound = range.alpha_min;
  } else {
    map.M = Matrix::Zero(d, d);
    map.beta = Vector::Zero(d);
    return map;
  }
  const Vector& w = probe.weights();
  map.probe_ = probe;
  map.bound_ = bound;
  map.offset_ = inverse_score(probe.nonlinearity(), bound) - probe.bias_or_zero();
  map.M = -(w * w.transpose()) / probe.norm_sq();
  map.beta = (map.offset_ / probe.norm_sq()) * w;
  return map;
}

/// Low-rank representation edit: project x + theta onto R x' = W_edit x + b_edit.
struct LoReftParams {
  Matrix R;       // r x d, orthonormal rows
  Matrix W_edit;  // r x d
  Vector b_edit;  // r

  /// Max absolute entry of R R^T - I.
  double gram_deviation() const {
    const Matrix gram = R * R.transpose();
    return (gram - Matrix::Identity(R.rows(), R.rows())).cwiseAbs().maxCoeff();
  }

  void validate(double tol = 1e-8) const {
    if (R.rows() == 0 || R.cols() == 0) throw DimensionError("LoReFT R is empty");
    if (R.rows() > R.cols()) throw DimensionError("LoReFT R must have rank r <= d");
    if (W_edit.rows() != R.rows() || W_edit.cols() != R.cols()) {
      throw DimensionError("LoReFT W_edit must have the same shape as R");
    }
    check_dim("LoReFT b_edit", R.rows(), b_edit.size());
    const double dev = gram_deviation();
    if (!(dev <= tol)) {
      throw PreconditionError("LoReFT R is not semi-orthogonal (Gram deviation " +
                              std::to_string(dev) + ")");
    }
  }
};

inline Intervention loreft_edit(const LoReftParams& params, const Vector& x, int layer = 0) {
  params.validate();
  check_dim("loreft_edit activation", params.R.cols(), x.size());
  Vector theta = params.R.transpose() * (params.W_edit * x + params.b_edit - params.R * x);
  return Intervention::make(std::move(theta), InterventionCase::loreft, layer);
}

}  // namespace liseco
