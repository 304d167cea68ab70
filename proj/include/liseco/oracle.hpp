#pragma once

// Numerical checks of the closed-form interventions that rely only on evaluating the probe
// forward (nu, never nu^-1) and on sampling. Nothing here calls into the controller.

#include "liseco/controller.hpp"
#include "liseco/nonlinearity.hpp"
#include "liseco/probe.hpp"
#include "liseco/random.hpp"
#include "liseco/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string_view>

namespace liseco {

enum class OracleMethod {
  line_search,
  nullspace_sampling,
  random_feasible,
  exhaustive_grid,
  sphere_sampling,
  angular_sweep
};

inline std::string_view to_string(OracleMethod m) {
  switch (m) {
    case OracleMethod::line_search: return "line_search";
    case OracleMethod::nullspace_sampling: return "nullspace_sampling";
    case OracleMethod::random_feasible: return "random_feasible";
    case OracleMethod::exhaustive_grid: return "exhaustive_grid";
    case OracleMethod::sphere_sampling: return "sphere_sampling";
    case OracleMethod::angular_sweep: return "angular_sweep";
  }
  return "unknown";
}

struct OracleTolerances {
  double feasibility = 1e-7;
  double optimality = 1e-8;
  double objective = 1e-9;
  double loreft_constraint = 1e-10;
  double loreft_optimality = 1e-10;
};

struct OracleReport {
  bool feasible = false;
  /// Distance of the checked theta's constraint value from the allowed set (0 when inside).
  double constraint_residual = 0.0;
  /// ||theta_closed|| - smallest feasible ||theta'|| found; <= 0 when nothing cheaper exists.
  double norm_gap = 0.0;
  /// For objective-type checks: best sampled improvement over theta_closed (<= 0 is optimal).
  double objective_gap = 0.0;
  double best_norm = std::numeric_limits<double>::infinity();
  std::size_t samples = 1;
  OracleMethod method = OracleMethod::line_search;
  /// Feasible and no cheaper / better candidate beyond tolerance.
  bool certified = false;
};

namespace detail {

inline double score_at(const Probe& probe, const Vector& x, const Vector& theta) {
  return apply(probe.nonlinearity(), probe.weights().dot(x + theta) + probe.bias_or_zero());
}

inline double range_residual(double s, const ScoreRange& r) {
  if (std::isnan(s)) return std::numeric_limits<double>::infinity();
  return std::max({0.0, r.alpha_min - s, s - r.alpha_max});
}

// Smallest c (if increasing) at which pred flips to true along a monotone predicate.
// Returns a c with pred(c) true, within a few ulps of the switch point.
template <typename Pred>
std::optional<double> monotone_boundary(Pred pred, bool true_for_large_c) {
  // Orient so that pred_up is false for small c, true for large c.
  auto pred_up = [&](double c) { return true_for_large_c ? pred(c) : pred(-c); };
  double lo = -1.0, hi = 1.0;
  int guard = 0;
  while (!pred_up(hi)) {
    lo = hi;
    hi *= 2.0;
    if (++guard > 200) return std::nullopt;
  }
  guard = 0;
  while (pred_up(lo)) {
    hi = lo;
    lo *= 2.0;
    if (++guard > 200) return std::nullopt;
  }
  for (int it = 0; it < 2000; ++it) {
    const double mid = lo + 0.5 * (hi - lo);
    if (mid <= lo || mid >= hi) break;
    (pred_up(mid) ? hi : lo) = mid;
  }
  return true_for_large_c ? hi : -hi;
}

}  // namespace detail

/// Certifies a range intervention: feasible within tolerance and no strictly feasible theta'
/// of smaller norm among (a) the exact 1-D boundary search along W and (b) random samples
/// theta_closed + z + s W_hat with W^T z = 0 and s keeping the logit inside the slab, plus
/// unconstrained random perturbations of theta_closed.
inline OracleReport verify_min_norm_range(const Probe& probe, const Vector& x, const ScoreRange& range,
                                          const Vector& theta_closed, std::size_t n_samples,
                                          std::uint64_t seed = 0, const OracleTolerances& tol = {}) {
  range.validate(probe.nonlinearity());
  check_dim("oracle activation", probe.dim(), x.size());
  check_dim("oracle theta", probe.dim(), theta_closed.size());
  const double closed_norm = theta_closed.norm();
  if (closed_norm == 0.0) {
    throw PreconditionError("verify_min_norm_range: called on a non-triggered (zero) intervention");
  }
  OracleReport rep;
  rep.method = OracleMethod::line_search;
  rep.constraint_residual = detail::range_residual(detail::score_at(probe, x, theta_closed), range);
  rep.feasible = rep.constraint_residual <= tol.feasibility;

  const Vector w_hat = probe.weights() / std::sqrt(probe.norm_sq());
  auto along = [&](double c) { return detail::score_at(probe, x, c * w_hat); };
  auto inside = [&](const Vector& th) { return range.contains(detail::score_at(probe, x, th)); };
  double best = std::numeric_limits<double>::infinity();
  std::size_t evaluated = 0;

  // Feasible c along W_hat is [c_low, c_high].
  const auto c_low = detail::monotone_boundary([&](double c) { return along(c) >= range.alpha_min; }, true);
  const auto c_high = detail::monotone_boundary([&](double c) { return along(c) <= range.alpha_max; }, false);
  evaluated += 2;
  for (const auto& c : {c_low, c_high}) {
    if (c && inside(*c * w_hat)) best = std::min(best, std::abs(*c));
  }
  if (c_low && c_high && *c_low <= 0.0 && *c_high >= 0.0 && inside(Vector::Zero(x.size()))) best = 0.0;

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double c_closed = theta_closed.dot(w_hat);
  for (std::size_t i = 0; i < n_samples; ++i) {
    Vector candidate;
    const double scale = closed_norm * std::pow(10.0, -6.0 * unit(rng));
    if (i % 2 == 0 && c_low && c_high && *c_low <= *c_high) {
      Vector z = standard_normal(x.size(), rng);
      z -= z.dot(w_hat) * w_hat;
      if (z.norm() > 0.0) z *= scale / z.norm();
      const double c = *c_low + unit(rng) * (*c_high - *c_low);
      candidate = theta_closed + z + (c - c_closed) * w_hat;
    } else {
      candidate = theta_closed + scale * unit_vector(x.size(), rng);
    }
    ++evaluated;
    if (inside(candidate)) best = std::min(best, candidate.norm());
  }
  rep.samples = evaluated;
  rep.best_norm = best;
  rep.norm_gap = std::isfinite(best) ? closed_norm - best : 0.0;
  rep.certified = rep.feasible && rep.norm_gap <= tol.optimality;
  return rep;
}

/// Assumption-free check in d = 2: minimum feasible norm over a grid x grid lattice of theta'
/// covering [-h, h]^2 with h = 1.5 ||theta_closed||. Certified when the lattice minimum is not
/// below ||theta_closed|| by more than the lattice spacing (reported as best_norm / norm_gap).
inline OracleReport verify_min_norm_grid(const Probe& probe, const Vector& x, const ScoreRange& range,
                                         const Vector& theta_closed, int grid = 400) {
  if (probe.dim() != 2) throw DimensionError("verify_min_norm_grid requires d = 2");
  check_dim("grid oracle theta", 2, theta_closed.size());
  if (grid < 2) throw PreconditionError("grid must have at least 2 points per axis");
  const double closed_norm = theta_closed.norm();
  const double h = 1.5 * std::max(closed_norm, 1e-12);
  const double spacing = 2.0 * h / (grid - 1);
  OracleReport rep;
  rep.method = OracleMethod::exhaustive_grid;
  rep.constraint_residual = detail::range_residual(detail::score_at(probe, x, theta_closed), range);
  rep.feasible = rep.constraint_residual <= OracleTolerances{}.feasibility;
  double best = std::numeric_limits<double>::infinity();
  Vector th(2);
  for (int i = 0; i < grid; ++i) {
    th[0] = -h + spacing * i;
    for (int j = 0; j < grid; ++j) {
      th[1] = -h + spacing * j;
      if (range.contains(detail::score_at(probe, x, th))) best = std::min(best, th.norm());
    }
  }
  rep.samples = static_cast<std::size_t>(grid) * static_cast<std::size_t>(grid);
  rep.best_norm = best;
  rep.norm_gap = std::isfinite(best) ? closed_norm - best : 0.0;
  rep.certified = rep.feasible && rep.norm_gap <= spacing;
  return rep;
}

/// Sphere-sampling check of the budgeted controller: no theta' with ||theta'||^2 = beta moves the
/// score further in the requested direction than theta_closed by more than 1e-9.
inline OracleReport verify_budget(const Probe& probe, const Vector& x, const Budget& budget,
                                  const Vector& theta_closed, std::size_t n_samples,
                                  std::uint64_t seed = 0, const OracleTolerances& tol = {}) {
  budget.validate();
  check_dim("budget oracle activation", probe.dim(), x.size());
  check_dim("budget oracle theta", probe.dim(), theta_closed.size());
  const double radius = std::sqrt(budget.beta);
  const double sign = budget.direction == BudgetDirection::decrease ? -1.0 : 1.0;
  OracleReport rep;
  rep.method = OracleMethod::sphere_sampling;
  rep.constraint_residual = std::max(0.0, theta_closed.squaredNorm() - budget.beta);
  rep.feasible = rep.constraint_residual <= 1e-12 * budget.beta;
  // Progress in the requested direction: larger is better.
  const double closed_progress = sign * detail::score_at(probe, x, theta_closed);
  double best_gain = -std::numeric_limits<double>::infinity();
  Rng rng(seed);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Vector candidate = radius * unit_vector(x.size(), rng);
    best_gain = std::max(best_gain, sign * detail::score_at(probe, x, candidate) - closed_progress);
  }
  rep.samples = std::max<std::size_t>(n_samples, 1);
  rep.best_norm = radius;
  rep.objective_gap = n_samples ? best_gain : 0.0;
  rep.certified = rep.feasible && rep.objective_gap <= tol.objective;
  return rep;
}

/// d = 2 angular sweep at resolution `step` radians. best_norm holds the angle (radians) between
/// the sweep's best direction and theta_closed; certified when that is within one step.
inline OracleReport verify_budget_angular(const Probe& probe, const Vector& x, const Budget& budget,
                                          const Vector& theta_closed, double step = 1e-4) {
  budget.validate();
  if (probe.dim() != 2) throw DimensionError("verify_budget_angular requires d = 2");
  const double radius = std::sqrt(budget.beta);
  const double sign = budget.direction == BudgetDirection::decrease ? -1.0 : 1.0;
  const double two_pi = 2.0 * std::numbers::pi;
  const auto n = static_cast<std::size_t>(std::ceil(two_pi / step));
  double best_val = -std::numeric_limits<double>::infinity();
  double best_angle = 0.0;
  Vector th(2);
  for (std::size_t i = 0; i < n; ++i) {
    const double phi = static_cast<double>(i) * step;
    th << radius * std::cos(phi), radius * std::sin(phi);
    // The logit is a strictly monotone proxy of the score that does not saturate.
    const double val = sign * (probe.weights().dot(x + th) + probe.bias_or_zero());
    if (val > best_val) {
      best_val = val;
      best_angle = phi;
    }
  }
  const double closed_angle = std::atan2(theta_closed[1], theta_closed[0]);
  double diff = std::fmod(std::abs(best_angle - closed_angle), two_pi);
  diff = std::min(diff, two_pi - diff);
  OracleReport rep;
  rep.method = OracleMethod::angular_sweep;
  rep.constraint_residual = std::max(0.0, theta_closed.squaredNorm() - budget.beta);
  rep.feasible = rep.constraint_residual <= 1e-12 * budget.beta;
  rep.samples = n;
  rep.best_norm = diff;
  rep.objective_gap = best_val - sign * (probe.weights().dot(x + theta_closed) + probe.bias_or_zero());
  rep.certified = rep.feasible && diff <= step;
  return rep;
}

/// Orthonormal basis (d x (d - r)) of the null space of R.
inline Matrix null_space_basis(const Matrix& R) {
  Eigen::JacobiSVD<Matrix> svd(R, Eigen::ComputeFullV);
  const Eigen::Index r = R.rows();
  return svd.matrixV().rightCols(R.cols() - r);
}

/// Constraint check R(x + theta) = W_edit x + b_edit plus null-space sampling over the affine
/// feasible set theta_closed + N z.
inline OracleReport verify_loreft(const LoReftParams& params, const Vector& x,
                                  const Vector& theta_closed, std::size_t n_samples,
                                  std::uint64_t seed = 0, const OracleTolerances& tol = {}) {
  params.validate();
  check_dim("loreft oracle activation", params.R.cols(), x.size());
  check_dim("loreft oracle theta", params.R.cols(), theta_closed.size());
  const Vector target = params.W_edit * x + params.b_edit;
  OracleReport rep;
  rep.method = OracleMethod::nullspace_sampling;
  rep.constraint_residual = (params.R * (x + theta_closed) - target).cwiseAbs().maxCoeff();
  rep.feasible = rep.constraint_residual <= tol.loreft_constraint;
  const Matrix N = null_space_basis(params.R);
  const double closed_norm = theta_closed.norm();
  double best = std::numeric_limits<double>::infinity();
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (N.cols() > 0) {
    for (std::size_t i = 0; i < n_samples; ++i) {
      const double scale = (1.0 + closed_norm) * std::pow(10.0, -6.0 * unit(rng));
      const Vector candidate = theta_closed + scale * (N * unit_vector(N.cols(), rng));
      best = std::min(best, candidate.norm());
    }
  }
  rep.samples = std::max<std::size_t>(n_samples, 1);
  rep.best_norm = best;
  rep.norm_gap = std::isfinite(best) ? closed_norm - best : 0.0;
  rep.certified = rep.feasible && rep.norm_gap <= tol.loreft_optimality;
  return rep;
}

}  // namespace liseco
