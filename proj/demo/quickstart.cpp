// Builds a small planted model, fits probes on its activations and compares the unsafe rate
// with and without range control.

#include "liseco/liseco.hpp"

#include <iostream>

using namespace liseco;

int main() {
  PlantedModelConfig cfg;
  cfg.seed = 3;
  const LayeredModel model = make_planted_model(cfg);

  const auto data = generate_constraint_set(model, ScoringFunction::planted(model), 2000, 11);
  const auto [train, valid] = split(data, 0.8, 12);
  const auto acts = extract_activations(model, features_of(train));
  const auto valid_acts = extract_activations(model, features_of(valid));
  const auto labels = binarize(scores_of(valid));

  ControlPolicy policy;
  policy.layers = default_control_layers(model.T());
  for (int t : policy.layers) {
    TrainConfig tc;
    tc.seed = static_cast<std::uint64_t>(t);
    Probe p = train_probe(acts[t], scores_of(train), tc, t);
    std::cout << "layer " << t << ": validation accuracy " << probe_accuracy(p, valid_acts[t], labels) << "\n";
    policy.probes.emplace(t, std::move(p));
  }

  const auto inputs = features_of(valid);
  auto unsafe_rate = [&](const ControlPolicy& pol) {
    std::size_t unsafe = 0;
    for (const auto& in : inputs) unsafe += unsafe_decision(controlled_forward(model, in, pol));
    return static_cast<double>(unsafe) / static_cast<double>(inputs.size());
  };

  std::cout << "unsafe rate, no control:          " << unsafe_rate(policy) << "\n";
  policy.mode = ScoreRange{1e-6, 0.05};
  std::cout << "unsafe rate, range [1e-6, 0.05]:  " << unsafe_rate(policy) << "\n";

  const GuaranteeAudit audit = guarantee_audit(model, policy, inputs);
  std::cout << "smallest in-range fraction over controlled layers: " << audit.min_in_range_fraction() << "\n";
}
