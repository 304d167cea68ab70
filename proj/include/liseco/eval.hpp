#pragma once

#include "liseco/controller.hpp"
#include "liseco/json_format.hpp"
#include "liseco/model.hpp"
#include "liseco/parallel.hpp"
#include "liseco/probe.hpp"
#include "liseco/types.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace liseco {

/// Slack used when re-scoring controlled activations against their target band.
inline constexpr double kAuditTolerance = 1e-7;

/// Target band implied by a control mode, if any.
inline std::optional<ScoreRange> audit_band(const ControlMode& mode) {
  if (const auto* r = std::get_if<ScoreRange>(&mode)) return *r;
  if (const auto* p = std::get_if<PinMode>(&mode)) return ScoreRange{p->p, p->p};
  if (const auto* t = std::get_if<ThresholdMode>(&mode)) {
    return ScoreRange{-std::numeric_limits<double>::infinity(), t->p};
  }
  return std::nullopt;
}

struct LayerAudit {
  int layer = 0;
  std::size_t n = 0;
  /// NaN when the mode has no target band and no reference range was given.
  double in_range_fraction = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> pre_scores;
  std::vector<double> post_scores;
};

struct GuaranteeAudit {
  std::optional<ScoreRange> band;
  std::vector<LayerAudit> layers;

  double min_in_range_fraction() const {
    double m = 1.0;
    for (const auto& l : layers) m = std::min(m, l.in_range_fraction);
    return m;
  }
};

/// Re-scores every controlled activation x_t + theta_t with its probe, independently of the
/// controller's own bookkeeping.
inline GuaranteeAudit guarantee_audit(const LayeredModel& model, const ControlPolicy& policy,
                                      std::span<const Vector> inputs, unsigned jobs = 1,
                                      std::optional<ScoreRange> reference = std::nullopt) {
  policy.validate(model);
  std::vector<Trajectory> trajs(inputs.size());
  parallel_for(inputs.size(), jobs,
               [&](std::size_t i) { trajs[i] = controlled_forward(model, inputs[i], policy); });
  GuaranteeAudit audit;
  audit.band = audit_band(policy.mode);
  if (!audit.band) audit.band = reference;
  for (int t : policy.layers) {
    const Probe& probe = policy.probes.at(t);
    LayerAudit la;
    la.layer = t;
    la.n = inputs.size();
    std::size_t hits = 0;
    for (const auto& traj : trajs) {
      const double pre = probe.score(traj.states[static_cast<std::size_t>(t)]);
      const double post = probe.score(traj.controlled_state(t));
      la.pre_scores.push_back(pre);
      la.post_scores.push_back(post);
      if (audit.band && post >= audit.band->alpha_min - kAuditTolerance &&
          post <= audit.band->alpha_max + kAuditTolerance) {
        ++hits;
      }
    }
    if (audit.band && la.n > 0) la.in_range_fraction = static_cast<double>(hits) / static_cast<double>(la.n);
    audit.layers.push_back(std::move(la));
  }
  return audit;
}

/// Per-layer statistics of one sweep setting.
struct LayerSweepStats {
  int layer = 0;
  double in_range_fraction = 0.0;
  double mean_intervention_norm = 0.0;
  double abstention_rate = 0.0;
};

struct SweepResult {
  std::vector<ScoreRange> alphas;
  std::vector<double> unsafe_fraction;
  std::vector<double> unsafe_se;
  std::vector<double> in_range_fraction;
  std::vector<double> mean_intervention_norm;
  std::vector<double> abstention_rate;
  std::vector<std::vector<LayerSweepStats>> per_layer;
  std::size_t n = 0;
  /// Uncontrolled reference.
  double baseline_unsafe_fraction = 0.0;
  double baseline_unsafe_se = 0.0;
};

/// Binomial standard error sqrt(p (1 - p) / n).
inline double binomial_se(double p, std::size_t n) {
  return n ? std::sqrt(p * (1.0 - p) / static_cast<double>(n)) : 0.0;
}

/// [alpha - half_width, alpha + half_width] clipped to stay `margin` inside (0, 1).
inline std::vector<ScoreRange> sweep_ranges(std::span<const double> alphas, double half_width,
                                            double margin = 1e-6) {
  std::vector<ScoreRange> out;
  for (double a : alphas) {
    out.push_back({std::clamp(a - half_width, margin, 1.0 - margin),
                   std::clamp(a + half_width, margin, 1.0 - margin)});
  }
  return out;
}

namespace detail {

struct SettingOutcome {
  bool unsafe = false;
  std::vector<Intervention> interventions;
  std::vector<double> post_scores;
};

}  // namespace detail

/// Runs controlled_forward for every (range, input) pair and aggregates output unsafety,
/// probe-level range satisfaction, intervention norms and abstentions.
inline SweepResult alpha_sweep(const LayeredModel& model, const std::map<int, Probe>& probes,
                               std::span<const int> layers, std::span<const ScoreRange> alphas,
                               std::span<const Vector> inputs, unsigned jobs = 1) {
  if (alphas.empty()) throw PreconditionError("alpha_sweep: no alpha settings");
  if (inputs.empty()) throw PreconditionError("alpha_sweep: no inputs");
  SweepResult res;
  res.n = inputs.size();
  const double n = static_cast<double>(inputs.size());

  std::vector<char> base_unsafe(inputs.size());
  parallel_for(inputs.size(), jobs,
               [&](std::size_t i) { base_unsafe[i] = unsafe_decision(forward(model, inputs[i])); });
  res.baseline_unsafe_fraction =
      static_cast<double>(std::count(base_unsafe.begin(), base_unsafe.end(), 1)) / n;
  res.baseline_unsafe_se = binomial_se(res.baseline_unsafe_fraction, res.n);

  for (const ScoreRange& range : alphas) {
    ControlPolicy policy{std::vector<int>(layers.begin(), layers.end()), probes, range};
    policy.validate(model);
    std::vector<detail::SettingOutcome> outcomes(inputs.size());
    parallel_for(inputs.size(), jobs, [&](std::size_t i) {
      Trajectory traj = controlled_forward(model, inputs[i], policy);
      auto& o = outcomes[i];
      o.unsafe = unsafe_decision(traj);
      for (const auto& iv : traj.interventions) {
        o.post_scores.push_back(policy.probes.at(iv.layer).score(traj.controlled_state(iv.layer)));
      }
      o.interventions = std::move(traj.interventions);
    });

    std::size_t unsafe = 0;
    std::vector<LayerSweepStats> stats(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) stats[l].layer = layers[l];
    for (const auto& o : outcomes) {
      unsafe += o.unsafe ? 1 : 0;
      for (std::size_t l = 0; l < layers.size(); ++l) {
        const double s = o.post_scores[l];
        if (s >= range.alpha_min - kAuditTolerance && s <= range.alpha_max + kAuditTolerance) {
          stats[l].in_range_fraction += 1.0;
        }
        stats[l].mean_intervention_norm += o.interventions[l].norm;
        stats[l].abstention_rate += o.interventions[l].triggered() ? 0.0 : 1.0;
      }
    }
    double in_range = 0.0, norm = 0.0, abst = 0.0;
    for (auto& s : stats) {
      s.in_range_fraction /= n;
      s.mean_intervention_norm /= n;
      s.abstention_rate /= n;
      in_range += s.in_range_fraction;
      norm += s.mean_intervention_norm;
      abst += s.abstention_rate;
    }
    const double nl = layers.empty() ? 1.0 : static_cast<double>(layers.size());
    const double p = static_cast<double>(unsafe) / n;
    res.alphas.push_back(range);
    res.unsafe_fraction.push_back(p);
    res.unsafe_se.push_back(binomial_se(p, res.n));
    res.in_range_fraction.push_back(layers.empty() ? 1.0 : in_range / nl);
    res.mean_intervention_norm.push_back(norm / nl);
    res.abstention_rate.push_back(layers.empty() ? 1.0 : abst / nl);
    res.per_layer.push_back(std::move(stats));
  }
  return res;
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw PreconditionError("spearman: need two equally sized samples of length >= 2");
  }
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(ra.size());
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(rb.size());
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

struct AbstentionReport {
  std::size_t n_inputs = 0;
  std::size_t n_interventions = 0;
  /// Fraction of controlled-layer interventions that are exactly zero.
  double abstention_rate = 0.0;
  /// Largest |controlled - uncontrolled| over all states and logits.
  double max_trajectory_deviation = 0.0;
  /// Inputs whose controlled trajectory is bit-identical to the uncontrolled one.
  std::size_t identical_trajectories = 0;
};

inline AbstentionReport abstention_report(const LayeredModel& model, const ControlPolicy& policy,
                                          std::span<const Vector> inputs, unsigned jobs = 1) {
  policy.validate(model);
  struct Row {
    std::size_t zero = 0, total = 0;
    double dev = 0.0;
    bool identical = true;
  };
  std::vector<Row> rows(inputs.size());
  parallel_for(inputs.size(), jobs, [&](std::size_t i) {
    const Trajectory base = forward(model, inputs[i]);
    const Trajectory ctrl = controlled_forward(model, inputs[i], policy);
    Row& r = rows[i];
    for (const auto& iv : ctrl.interventions) {
      ++r.total;
      if (!iv.triggered()) ++r.zero;
    }
    // Compare what the next layer actually consumed: x_t + theta_t.
    for (int t = 0; t <= model.T(); ++t) {
      const Vector diff = ctrl.controlled_state(t) - base.states[static_cast<std::size_t>(t)];
      r.dev = std::max(r.dev, diff.cwiseAbs().maxCoeff());
      if (diff.cwiseAbs().maxCoeff() != 0.0) r.identical = false;
    }
    r.identical = r.identical && ctrl.output_logits == base.output_logits;
    r.dev = std::max(r.dev, (ctrl.output_logits - base.output_logits).cwiseAbs().maxCoeff());
  });
  AbstentionReport rep;
  rep.n_inputs = inputs.size();
  std::size_t zero = 0;
  for (const auto& r : rows) {
    zero += r.zero;
    rep.n_interventions += r.total;
    rep.max_trajectory_deviation = std::max(rep.max_trajectory_deviation, r.dev);
    rep.identical_trajectories += r.identical ? 1 : 0;
  }
  rep.abstention_rate =
      rep.n_interventions ? static_cast<double>(zero) / static_cast<double>(rep.n_interventions) : 1.0;
  return rep;
}

/// Keeps the inputs whose uncontrolled trajectory satisfies the policy's band at every
/// controlled layer.
inline std::vector<Vector> select_in_range_inputs(const LayeredModel& model,
                                                  const ControlPolicy& policy,
                                                  std::span<const Vector> candidates) {
  const auto band = audit_band(policy.mode);
  if (!band) throw PreconditionError("select_in_range_inputs: policy mode has no score band");
  std::vector<Vector> out;
  for (const auto& in : candidates) {
    const Trajectory traj = forward(model, in);
    bool ok = true;
    for (int t : policy.layers) {
      ok = ok && band->contains(policy.probes.at(t).score(traj.states[static_cast<std::size_t>(t)]));
    }
    if (ok) out.push_back(in);
  }
  return out;
}

struct OverheadReport {
  std::size_t n_samples = 0;
  double median_forward_ns = 0.0;
  double median_intervention_ns = 0.0;
  double median_scoring_ns = 0.0;
  /// median_intervention_ns / median_forward_ns
  double ratio = 0.0;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

template <typename Fn>
double time_per_call_ns(int reps, Fn&& fn) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  for (int r = 0; r < reps; ++r) fn();
  const auto stop = clock::now();
  return std::chrono::duration<double, std::nano>(stop - start).count() / reps;
}

}  // namespace detail

/// Median per-layer cost of the control step versus the layer's own forward map, measured at
/// every controlled layer of every input. Intervention cost covers probe scoring, the case
/// test, the closed-form theta and the vector add. In mode off only scoring is timed.
inline OverheadReport overhead_report(const LayeredModel& model, const ControlPolicy& policy,
                                      std::span<const Vector> inputs, int reps = 64) {
  policy.validate(model);
  const bool off = std::holds_alternative<ModeOff>(policy.mode);
  std::vector<double> fwd, ctl, scr;
  volatile double sink = 0.0;
  for (const auto& in : inputs) {
    const Trajectory traj = forward(model, in);
    for (int t : policy.layers) {
      const Layer& layer = model.layers[static_cast<std::size_t>(t - 1)];
      const Vector& prev = traj.states[static_cast<std::size_t>(t - 1)];
      const Vector& cur = traj.states[static_cast<std::size_t>(t)];
      const Probe& probe = policy.probes.at(t);
      fwd.push_back(detail::time_per_call_ns(reps, [&] { sink = sink + layer.apply(prev)[0]; }));
      scr.push_back(detail::time_per_call_ns(reps, [&] { sink = sink + probe.score(cur); }));
      if (off) {
        ctl.push_back(scr.back());
      } else {
        Vector next(cur.size());
        ctl.push_back(detail::time_per_call_ns(reps, [&] {
          Intervention iv = policy.compute(t, cur);
          next.noalias() = cur + iv.theta;
          sink = sink + next[0];
        }));
      }
    }
  }
  OverheadReport rep;
  rep.n_samples = fwd.size();
  rep.median_forward_ns = detail::median(fwd);
  rep.median_intervention_ns = detail::median(ctl);
  rep.median_scoring_ns = detail::median(scr);
  rep.ratio = rep.median_forward_ns > 0.0 ? rep.median_intervention_ns / rep.median_forward_ns : 0.0;
  return rep;
}

/// Header: alpha_min,alpha_max,layer,n,unsafe_fraction,unsafe_se,in_range_fraction,
/// mean_intervention_norm,abstention_rate. One row per setting per controlled layer; the
/// uncontrolled baseline is a row with empty alpha columns and layer -1.
inline std::string sweep_csv(const SweepResult& res) {
  std::ostringstream os;
  os << "alpha_min,alpha_max,layer,n,unsafe_fraction,unsafe_se,in_range_fraction,"
        "mean_intervention_norm,abstention_rate\n";
  os << ",,-1," << res.n << ',' << format_double(res.baseline_unsafe_fraction) << ','
     << format_double(res.baseline_unsafe_se) << ",,,\n";
  for (std::size_t i = 0; i < res.alphas.size(); ++i) {
    for (const auto& s : res.per_layer[i]) {
      os << format_double(res.alphas[i].alpha_min) << ',' << format_double(res.alphas[i].alpha_max)
         << ',' << s.layer << ',' << res.n << ',' << format_double(res.unsafe_fraction[i]) << ','
         << format_double(res.unsafe_se[i]) << ',' << format_double(s.in_range_fraction) << ','
         << format_double(s.mean_intervention_norm) << ',' << format_double(s.abstention_rate)
         << '\n';
    }
  }
  return os.str();
}

inline Json sweep_json(const SweepResult& res) {
  Json j;
  j["n"] = res.n;
  j["baseline"] = {{"unsafe_fraction", res.baseline_unsafe_fraction},
                   {"unsafe_se", res.baseline_unsafe_se}};
  Json rows = Json::array();
  for (std::size_t i = 0; i < res.alphas.size(); ++i) {
    rows.push_back({{"alpha_min", res.alphas[i].alpha_min},
                    {"alpha_max", res.alphas[i].alpha_max},
                    {"unsafe_fraction", res.unsafe_fraction[i]},
                    {"unsafe_se", res.unsafe_se[i]},
                    {"in_range_fraction", res.in_range_fraction[i]},
                    {"mean_intervention_norm", res.mean_intervention_norm[i]},
                    {"abstention_rate", res.abstention_rate[i]}});
  }
  j["settings"] = rows;
  return j;
}

}  // namespace liseco
