#pragma once

#include "liseco/controller.hpp"
#include "liseco/parallel.hpp"
#include "liseco/probe.hpp"
#include "liseco/random.hpp"
#include "liseco/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

namespace liseco {

enum class LayerKind { tanh_residual, identity };

inline std::string_view to_string(LayerKind k) {
  return k == LayerKind::tanh_residual ? "tanh_residual" : "identity";
}

inline std::optional<LayerKind> parse_layer_kind(std::string_view s) {
  if (s == "tanh_residual") return LayerKind::tanh_residual;
  if (s == "identity") return LayerKind::identity;
  return std::nullopt;
}

/// l(x) = tanh(A x + c) + x, or the identity.
struct Layer {
  Matrix A;
  Vector c;
  LayerKind kind = LayerKind::tanh_residual;

  Vector apply(const Vector& x) const {
    if (kind == LayerKind::identity) return x;
    Vector h = A * x + c;
    return h.array().tanh().matrix() + x;
  }
};

/// Embedding E (d x m), T layers on R^d, unembedding U (k x d) with one unsafe outcome.
struct LayeredModel {
  Matrix embed;
  std::vector<Layer> layers;
  Matrix unembed;
  int unsafe_index = 0;
  std::uint64_t seed = 0;

  Eigen::Index m() const { return embed.cols(); }
  Eigen::Index d() const { return embed.rows(); }
  int T() const { return static_cast<int>(layers.size()); }
  Eigen::Index k() const { return unembed.rows(); }

  void validate() const {
    if (T() < 2) throw DimensionError("model needs T >= 2 layers");
    if (d() < 2) throw DimensionError("model needs d >= 2");
    if (k() < 2) throw DimensionError("model needs k >= 2 outcomes");
    if (m() < 1) throw DimensionError("model needs m >= 1 input features");
    check_dim("unembed columns", d(), unembed.cols());
    if (unsafe_index < 0 || unsafe_index >= k()) {
      throw DimensionError("unsafe_index " + std::to_string(unsafe_index) + " outside [0, k)");
    }
    for (int t = 0; t < T(); ++t) {
      const Layer& l = layers[static_cast<std::size_t>(t)];
      if (l.kind == LayerKind::identity) continue;
      const std::string name = "layer " + std::to_string(t + 1);
      check_dim((name + " A rows").c_str(), d(), l.A.rows());
      check_dim((name + " A cols").c_str(), d(), l.A.cols());
      check_dim((name + " c").c_str(), d(), l.c.size());
    }
  }
};

/// Unit direction of the unsafe unembedding row.
inline Vector planted_direction(const LayeredModel& model) {
  Vector u = model.unembed.row(model.unsafe_index).transpose();
  return u / u.norm();
}

struct PlantedModelConfig {
  int m = 16;
  int d = 32;
  int T = 8;
  int k = 4;
  double embed_gain = 3.0;
  double layer_gain = 0.2;
  double bias_scale = 0.1;
  std::uint64_t seed = 0;
};

namespace detail {

// Unsafe row is the planted unit direction u; every safe row is -a_j u with a_j > 0, so the
// unsafe outcome wins exactly when u^T x_T > 0.
inline Matrix planted_unembed(const Vector& u, int k, int unsafe_index, Rng& rng) {
  std::uniform_real_distribution<double> scale(0.5, 1.5);
  Matrix U(k, u.size());
  for (int j = 0; j < k; ++j) {
    U.row(j) = (j == unsafe_index ? 1.0 : -scale(rng)) * u.transpose();
  }
  return U;
}

inline Layer random_layer(int d, double gain, double bias_scale, Rng& rng) {
  Layer l;
  l.A = standard_normal(d, d, rng) * (gain / std::sqrt(static_cast<double>(d)));
  l.c = standard_normal(d, rng) * bias_scale;
  l.kind = LayerKind::tanh_residual;
  return l;
}

}  // namespace detail

/// Random tanh-residual model whose unsafe outcome is linearly encoded along a planted direction.
inline LayeredModel make_planted_model(const PlantedModelConfig& cfg) {
  Rng rng(cfg.seed);
  LayeredModel model;
  model.seed = cfg.seed;
  model.embed = standard_normal(cfg.d, cfg.m, rng) * (cfg.embed_gain / std::sqrt(double(cfg.m)));
  for (int t = 0; t < cfg.T; ++t) {
    model.layers.push_back(detail::random_layer(cfg.d, cfg.layer_gain, cfg.bias_scale, rng));
  }
  const Vector u = unit_vector(cfg.d, rng);
  model.unsafe_index = 0;
  model.unembed = detail::planted_unembed(u, cfg.k, model.unsafe_index, rng);
  model.validate();
  return model;
}

/// Model whose layers after `control_layer` are the identity, so a probe along the planted
/// direction at `control_layer` reproduces the output attribute exactly on all of R^d.
inline LayeredModel make_exact_probe_model(const PlantedModelConfig& cfg, int control_layer) {
  if (control_layer < 1 || control_layer > cfg.T) {
    throw PreconditionError("control_layer must lie in [1, T]");
  }
  LayeredModel model = make_planted_model(cfg);
  for (int t = control_layer + 1; t <= cfg.T; ++t) {
    Layer& l = model.layers[static_cast<std::size_t>(t - 1)];
    l.kind = LayerKind::identity;
    l.A.resize(0, 0);
    l.c.resize(0);
  }
  return model;
}

struct ModeOff {};
struct ThresholdMode {
  double p;
};
struct PinMode {
  double p;
};

using ControlMode = std::variant<ModeOff, ScoreRange, ThresholdMode, PinMode, Budget>;

inline std::string_view mode_name(const ControlMode& mode) {
  return std::visit(
      [](const auto& m) -> std::string_view {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, ModeOff>) return "off";
        else if constexpr (std::is_same_v<M, ScoreRange>) return "range";
        else if constexpr (std::is_same_v<M, ThresholdMode>) return "threshold";
        else if constexpr (std::is_same_v<M, PinMode>) return "pin";
        else return "budget";
      },
      mode);
}

/// Layers 1..T whose index is at least ceil(T/3).
inline std::vector<int> default_control_layers(int T) {
  std::vector<int> layers;
  for (int t = (T + 2) / 3; t <= T; ++t) layers.push_back(std::max(t, 1));
  return layers;
}

/// Which layers are controlled, with which probe, under which constraint.
struct ControlPolicy {
  std::vector<int> layers;
  std::map<int, Probe> probes;
  ControlMode mode = ModeOff{};

  void validate(const LayeredModel& model) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const int t = layers[i];
      if (t < 1 || t > model.T()) {
        throw DimensionError("control layer " + std::to_string(t) + " outside [1, T]");
      }
      if (i > 0 && layers[i - 1] >= t) {
        throw PreconditionError("control layers must be strictly increasing");
      }
      const auto it = probes.find(t);
      if (it == probes.end()) {
        throw PreconditionError("no probe for control layer " + std::to_string(t));
      }
      check_dim(("probe for layer " + std::to_string(t)).c_str(), model.d(), it->second.dim());
    }
  }

  Intervention compute(int t, const Vector& x) const {
    const Probe& probe = probes.at(t);
    return std::visit(
        [&](const auto& m) -> Intervention {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, ModeOff>) return Intervention::zero(x.size(), t);
          else if constexpr (std::is_same_v<M, ScoreRange>) return intervene_range(probe, x, m);
          else if constexpr (std::is_same_v<M, ThresholdMode>)
            return intervene_threshold(probe, x, m.p);
          else if constexpr (std::is_same_v<M, PinMode>) return intervene_pin(probe, x, m.p);
          else {
            Intervention iv = intervene_budget(probe, m);
            iv.layer = t;
            return iv;
          }
        },
        mode);
  }
};

/// states[t] is x_t before control; states[t+1] = l_{t+1}(states[t] + theta_t).
struct Trajectory {
  std::vector<Vector> states;
  std::vector<Intervention> interventions;  // one per controlled layer, ascending layer order
  Vector output_logits;
  int unsafe_index = 0;

  const Intervention* intervention_at(int t) const {
    for (const auto& iv : interventions)
      if (iv.layer == t) return &iv;
    return nullptr;
  }

  /// x_t + theta_t (theta_t = 0 for uncontrolled layers).
  Vector controlled_state(int t) const {
    const Vector& x = states.at(static_cast<std::size_t>(t));
    if (const Intervention* iv = intervention_at(t)) return x + iv->theta;
    return x;
  }
};

namespace detail {

inline void require_finite_state(const Vector& x, int t) {
  if (!x.allFinite()) throw Error("non-finite state at layer " + std::to_string(t));
}

}  // namespace detail

inline Trajectory forward(const LayeredModel& model, const Vector& input) {
  check_dim("model input", model.m(), input.size());
  Trajectory traj;
  traj.unsafe_index = model.unsafe_index;
  traj.states.reserve(static_cast<std::size_t>(model.T()) + 1);
  traj.states.push_back(model.embed * input);
  detail::require_finite_state(traj.states.back(), 0);
  for (int t = 1; t <= model.T(); ++t) {
    traj.states.push_back(model.layers[static_cast<std::size_t>(t - 1)].apply(traj.states.back()));
    detail::require_finite_state(traj.states.back(), t);
  }
  traj.output_logits = model.unembed * traj.states.back();
  return traj;
}

/// Forward pass with the policy's intervention applied after every controlled layer.
inline Trajectory controlled_forward(const LayeredModel& model, const Vector& input,
                                     const ControlPolicy& policy) {
  check_dim("model input", model.m(), input.size());
  policy.validate(model);
  Trajectory traj;
  traj.unsafe_index = model.unsafe_index;
  traj.states.reserve(static_cast<std::size_t>(model.T()) + 1);
  traj.interventions.reserve(policy.layers.size());
  traj.states.push_back(model.embed * input);
  detail::require_finite_state(traj.states.back(), 0);
  Vector current = traj.states.back();
  auto next_controlled = policy.layers.begin();
  for (int t = 1; t <= model.T(); ++t) {
    current = model.layers[static_cast<std::size_t>(t - 1)].apply(current);
    detail::require_finite_state(current, t);
    traj.states.push_back(current);
    if (next_controlled != policy.layers.end() && *next_controlled == t) {
      Intervention iv = policy.compute(t, current);
      if (iv.triggered()) current += iv.theta;
      traj.interventions.push_back(std::move(iv));
      ++next_controlled;
    }
  }
  traj.output_logits = model.unembed * current;
  return traj;
}

/// Per-layer activations for every input: result[t][i] is x_t for inputs[i], t = 0..T.
inline std::vector<std::vector<Vector>> extract_activations(const LayeredModel& model,
                                                            std::span<const Vector> inputs,
                                                            unsigned jobs = 1) {
  if (inputs.empty()) throw PreconditionError("extract_activations: no inputs");
  std::vector<std::vector<Vector>> per_layer(static_cast<std::size_t>(model.T()) + 1,
                                             std::vector<Vector>(inputs.size()));
  parallel_for(inputs.size(), jobs, [&](std::size_t i) {
    Trajectory traj = forward(model, inputs[i]);
    for (std::size_t t = 0; t < traj.states.size(); ++t) per_layer[t][i] = std::move(traj.states[t]);
  });
  return per_layer;
}

/// True iff the unsafe outcome holds the strict maximum logit; ties go to safe.
inline bool unsafe_decision(const Trajectory& traj) {
  const Vector& logits = traj.output_logits;
  if (logits.size() == 0) throw PreconditionError("unsafe_decision: trajectory has no logits");
  const double unsafe = logits[traj.unsafe_index];
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    if (j != traj.unsafe_index && logits[j] >= unsafe) return false;
  }
  return true;
}

}  // namespace liseco
