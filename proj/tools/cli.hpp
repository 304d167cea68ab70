#pragma once

// Pipeline commands behind the `liseco` executable.

#include "liseco/liseco.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace liseco::cli {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "0.1.0";

/// Every key accepted in a config file; each is also a `--key` flag.
struct RunConfig {
  std::string model_path;
  std::string constraint_path;
  std::string probes_dir;
  std::string output_dir = "out";

  int m = 16;
  int d = 32;
  int T = 8;
  int k = 4;
  double embed_gain = 3.0;
  double layer_gain = 0.2;
  double bias_scale = 0.1;

  std::size_t n = 2000;
  double noise_sd = 0.0;
  ScorerShape scorer = ScorerShape::sigmoidal;

  double train_frac = 0.8;
  int epochs = 1000;
  double learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::adam;

  std::optional<std::vector<int>> control_layers;  // nullopt = "auto"
  Nonlinearity nonlinearity = Nonlinearity::sigmoid;
  std::string mode = "range";
  std::optional<double> alpha_min;
  std::optional<double> alpha_max;
  std::optional<double> p;
  std::optional<double> beta;
  BudgetDirection direction = BudgetDirection::decrease;

  std::vector<double> alphas{0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99};
  double half_width = 0.01;
  std::size_t n_samples = 200;
  bool emit_theta = false;

  std::uint64_t seed = 0;
  std::optional<unsigned> jobs;

  fs::path out() const { return output_dir; }
  fs::path model_file() const { return model_path.empty() ? out() / "model.json" : fs::path(model_path); }
  fs::path constraint_file() const {
    return constraint_path.empty() ? out() / "constraint.jsonl" : fs::path(constraint_path);
  }
  fs::path probes_path() const { return probes_dir.empty() ? out() / "probes" : fs::path(probes_dir); }
  unsigned job_count() const { return jobs ? *jobs : jobs_from_env(); }

  std::vector<int> layers() const { return control_layers ? *control_layers : default_control_layers(T); }

  /// Mode parameters must match the mode.
  ControlMode control_mode() const {
    auto need = [&](const std::optional<double>& v, const char* key) {
      if (!v) throw FormatError("config: field \"" + std::string(key) + "\": required by mode " + mode);
      return *v;
    };
    if (mode == "off") return ModeOff{};
    if (mode == "range") {
      ScoreRange r{need(alpha_min, "alpha_min"), need(alpha_max, "alpha_max")};
      r.validate(nonlinearity);
      return r;
    }
    if (mode == "threshold") {
      require_inside_image(nonlinearity, need(p, "p"), "p");
      return ThresholdMode{*p};
    }
    if (mode == "pin") {
      require_inside_image(nonlinearity, need(p, "p"), "p");
      return PinMode{*p};
    }
    if (mode == "budget") {
      Budget b{need(beta, "beta"), direction};
      b.validate();
      return b;
    }
    throw FormatError("config: field \"mode\": expected one of off, range, threshold, pin, budget");
  }

  void validate() const {
    if (m < 1 || d < 2 || T < 2 || k < 2) throw FormatError("config: need m >= 1, d >= 2, T >= 2, k >= 2");
    if (n < 1) throw FormatError("config: field \"n\": must be >= 1");
    if (!(train_frac > 0.0 && train_frac < 1.0)) {
      throw FormatError("config: field \"train_frac\": must lie in (0, 1)");
    }
    if (!(half_width >= 0.0)) throw FormatError("config: field \"half_width\": must be >= 0");
    if (alphas.empty()) throw FormatError("config: field \"alphas\": must not be empty");
    for (int t : layers()) {
      if (t < 1 || t > T) throw FormatError("config: field \"control_layers\": layer outside [1, T]");
    }
  }
};

namespace detail {

template <typename E, typename Parse>
E enum_field(const Json& v, const char* key, Parse parse) {
  if (!v.is_string()) throw FormatError(std::string("config: field \"") + key + "\": expected a string");
  const auto e = parse(v.get<std::string>());
  if (!e) throw FormatError(std::string("config: field \"") + key + "\": unknown value " + v.dump());
  return *e;
}

inline void bad(const char* key, const char* why) {
  throw FormatError(std::string("config: field \"") + key + "\": " + why);
}

inline std::optional<double> opt_number(const Json& v, const char* key) {
  if (v.is_null()) return std::nullopt;
  if (!v.is_number()) bad(key, "expected a number or null");
  return v.get<double>();
}

template <typename I>
I integer(const Json& v, const char* key) {
  if (!v.is_number_integer()) bad(key, "expected an integer");
  if (std::is_unsigned_v<I> && v.get<long long>() < 0) bad(key, "must be non-negative");
  return static_cast<I>(v.get<long long>());
}

inline double number(const Json& v, const char* key) {
  if (!v.is_number()) bad(key, "expected a number");
  return v.get<double>();
}

inline std::string str(const Json& v, const char* key) {
  if (!v.is_string()) bad(key, "expected a string");
  return v.get<std::string>();
}

}  // namespace detail

inline Json to_json(const RunConfig& c) {
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  Json j;
  j["model_path"] = c.model_path;
  j["constraint_path"] = c.constraint_path;
  j["probes_dir"] = c.probes_dir;
  j["output_dir"] = c.output_dir;
  j["m"] = c.m;
  j["d"] = c.d;
  j["T"] = c.T;
  j["k"] = c.k;
  j["embed_gain"] = c.embed_gain;
  j["layer_gain"] = c.layer_gain;
  j["bias_scale"] = c.bias_scale;
  j["n"] = c.n;
  j["noise_sd"] = c.noise_sd;
  j["scorer"] = std::string(to_string(c.scorer));
  j["train_frac"] = c.train_frac;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["optimizer"] = std::string(to_string(c.optimizer));
  j["control_layers"] = c.control_layers ? Json(*c.control_layers) : Json("auto");
  j["nonlinearity"] = std::string(to_string(c.nonlinearity));
  j["mode"] = c.mode;
  j["alpha_min"] = opt(c.alpha_min);
  j["alpha_max"] = opt(c.alpha_max);
  j["p"] = opt(c.p);
  j["beta"] = opt(c.beta);
  j["direction"] = std::string(to_string(c.direction));
  j["alphas"] = c.alphas;
  j["half_width"] = c.half_width;
  j["n_samples"] = c.n_samples;
  j["emit_theta"] = c.emit_theta;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs ? Json(*c.jobs) : Json(nullptr);
  return j;
}

/// Applies the keys present in `j` on top of `c`. Unknown keys are rejected.
inline void apply_json(RunConfig& c, const Json& j) {
  using namespace detail;
  if (!j.is_object()) throw FormatError("config: expected a JSON object");
  for (const auto& [key, v] : j.items()) {
    const char* k = key.c_str();
    if (key == "model_path") c.model_path = str(v, k);
    else if (key == "constraint_path") c.constraint_path = str(v, k);
    else if (key == "probes_dir") c.probes_dir = str(v, k);
    else if (key == "output_dir") c.output_dir = str(v, k);
    else if (key == "m") c.m = integer<int>(v, k);
    else if (key == "d") c.d = integer<int>(v, k);
    else if (key == "T") c.T = integer<int>(v, k);
    else if (key == "k") c.k = integer<int>(v, k);
    else if (key == "embed_gain") c.embed_gain = number(v, k);
    else if (key == "layer_gain") c.layer_gain = number(v, k);
    else if (key == "bias_scale") c.bias_scale = number(v, k);
    else if (key == "n") c.n = integer<std::size_t>(v, k);
    else if (key == "noise_sd") c.noise_sd = number(v, k);
    else if (key == "scorer") c.scorer = enum_field<ScorerShape>(v, k, parse_scorer_shape);
    else if (key == "train_frac") c.train_frac = number(v, k);
    else if (key == "epochs") c.epochs = integer<int>(v, k);
    else if (key == "learning_rate") c.learning_rate = number(v, k);
    else if (key == "optimizer") c.optimizer = enum_field<Optimizer>(v, k, parse_optimizer);
    else if (key == "control_layers") {
      if (v.is_string() && v.get<std::string>() == "auto") {
        c.control_layers.reset();
      } else if (v.is_array()) {
        std::vector<int> layers;
        for (const auto& e : v) layers.push_back(integer<int>(e, k));
        c.control_layers = layers;
      } else {
        bad(k, "expected \"auto\" or an array of layer indices");
      }
    } else if (key == "nonlinearity") c.nonlinearity = enum_field<Nonlinearity>(v, k, parse_nonlinearity);
    else if (key == "mode") c.mode = str(v, k);
    else if (key == "alpha_min") c.alpha_min = opt_number(v, k);
    else if (key == "alpha_max") c.alpha_max = opt_number(v, k);
    else if (key == "p") c.p = opt_number(v, k);
    else if (key == "beta") c.beta = opt_number(v, k);
    else if (key == "direction") c.direction = enum_field<BudgetDirection>(v, k, parse_budget_direction);
    else if (key == "alphas") {
      if (!v.is_array()) bad(k, "expected an array of numbers");
      c.alphas.clear();
      for (const auto& e : v) c.alphas.push_back(number(e, k));
    } else if (key == "half_width") c.half_width = number(v, k);
    else if (key == "n_samples") c.n_samples = integer<std::size_t>(v, k);
    else if (key == "emit_theta") {
      if (!v.is_boolean()) bad(k, "expected true or false");
      c.emit_theta = v.get<bool>();
    } else if (key == "seed") c.seed = integer<std::uint64_t>(v, k);
    else if (key == "jobs") {
      if (v.is_null()) c.jobs.reset();
      else c.jobs = integer<unsigned>(v, k);
    } else {
      throw FormatError("config: unknown field \"" + key + "\"");
    }
  }
}

/// Turns a command-line string into the JSON value a config file would hold for `key`.
inline Json flag_value(const std::string& key, const std::string& text) {
  static const std::vector<std::string> strings{"model_path", "constraint_path", "probes_dir",
                                                "output_dir", "scorer",          "optimizer",
                                                "nonlinearity", "mode",          "direction"};
  if (std::find(strings.begin(), strings.end(), key) != strings.end()) return text;
  if (key == "control_layers" && text == "auto") return text;
  if (key == "control_layers" || key == "alphas") {
    Json arr = Json::array();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      const Json e = Json::parse(item, nullptr, false);
      if (e.is_discarded() || !e.is_number()) {
        throw FormatError("flag --" + key + ": expected a comma-separated list of numbers");
      }
      arr.push_back(e);
    }
    return arr;
  }
  if (key == "emit_theta") {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw FormatError("flag --emit_theta: expected true or false");
  }
  if (text == "null") return nullptr;
  const Json v = Json::parse(text, nullptr, false);
  if (v.is_discarded() || !v.is_number()) throw FormatError("flag --" + key + ": expected a number");
  return v;
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  const Json defaults = to_json(RunConfig{});
  for (const auto& [k, v] : defaults.items()) keys.push_back(k);
  return keys;
}

// ---------------------------------------------------------------------------------------------
// Manifest

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
inline std::string fingerprint(const fs::path& path) {
  const std::string bytes = io::read_text(path);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// One entry per command in manifest.json. Everything except the "timestamps" object is a
/// function of the config, seed and input bytes.
struct ManifestEntry {
  std::string command;
  Json inputs = Json::object();
  Json seeds = Json::object();
  Json outputs = Json::array();
  Json results = Json::object();

  void input(const std::string& role, const fs::path& path) {
    inputs[role] = {{"file", path.filename().string()}, {"fnv1a64", fingerprint(path)}};
  }
};

inline Json manifest_config(const RunConfig& c) {
  Json j = to_json(c);
  for (const char* k : {"model_path", "constraint_path", "probes_dir", "output_dir", "jobs"}) j.erase(k);
  return j;
}

inline void write_manifest(const RunConfig& cfg, const ManifestEntry& e) {
  const fs::path path = cfg.out() / "manifest.json";
  Json man = Json::object();
  if (fs::exists(path)) {
    man = io::read_json(path);
    if (!man.is_object()) man = Json::object();
  }
  man["tool"] = "liseco";
  man["version"] = kVersion;
  Json entry;
  entry["config"] = manifest_config(cfg);
  entry["inputs"] = e.inputs;
  entry["seeds"] = e.seeds;
  entry["outputs"] = e.outputs;
  entry["results"] = e.results;
  man["commands"][e.command] = entry;
  man["timestamps"][e.command] = utc_timestamp();
  io::write_json(path, man);
}

// ---------------------------------------------------------------------------------------------
// Seeds

enum class Stream : std::uint64_t { data = 1, split = 2, oracle = 3, train = 100 };

inline std::uint64_t derive_seed(std::uint64_t seed, Stream s, std::uint64_t offset = 0) {
  Rng rng = substream(seed, static_cast<std::uint64_t>(s) + offset);
  return rng();
}

// ---------------------------------------------------------------------------------------------
// Shared loading

inline PlantedModelConfig model_config(const RunConfig& c) {
  PlantedModelConfig p;
  p.m = c.m;
  p.d = c.d;
  p.T = c.T;
  p.k = c.k;
  p.embed_gain = c.embed_gain;
  p.layer_gain = c.layer_gain;
  p.bias_scale = c.bias_scale;
  p.seed = c.seed;
  return p;
}

inline void require_file(const fs::path& path, const char* role) {
  if (!fs::exists(path)) throw FormatError(path.string() + ": missing " + role);
}

inline fs::path probe_file(const fs::path& dir, int t) {
  return dir / ("layer_" + std::to_string(t) + ".json");
}

inline std::map<int, Probe> load_policy_probes(const RunConfig& cfg, const LayeredModel& model,
                                               ManifestEntry* entry) {
  std::map<int, Probe> probes;
  for (int t : cfg.layers()) {
    const fs::path path = probe_file(cfg.probes_path(), t);
    require_file(path, "probe file");
    Probe p = io::load_probe(path);
    if (p.layer() != t) {
      throw FormatError(path.string() + ": field \"layer\": expected " + std::to_string(t) + ", got " +
                        std::to_string(p.layer()));
    }
    if (p.dim() != model.d()) {
      throw DimensionError(path.string() + ": field \"weights\": dimension " + std::to_string(p.dim()) +
                           " does not match model d = " + std::to_string(model.d()));
    }
    if (entry) entry->input("probe_layer_" + std::to_string(t), path);
    probes.emplace(t, std::move(p));
  }
  return probes;
}

inline LayeredModel load_run_model(const RunConfig& cfg, ManifestEntry& entry) {
  require_file(cfg.model_file(), "model file");
  entry.input("model", cfg.model_file());
  return io::load_model(cfg.model_file());
}

inline std::vector<ConstraintExample> load_run_data(const RunConfig& cfg, const LayeredModel& model,
                                                    ManifestEntry& entry) {
  require_file(cfg.constraint_file(), "constraint set");
  entry.input("constraint", cfg.constraint_file());
  auto data = load_constraint_set(cfg.constraint_file());
  if (data.empty()) throw FormatError(cfg.constraint_file().string() + ": constraint set is empty");
  if (data.front().features.size() != model.m()) {
    throw DimensionError(cfg.constraint_file().string() + ": field \"features\": dimension " +
                         std::to_string(data.front().features.size()) + " does not match model m = " +
                         std::to_string(model.m()));
  }
  return data;
}

// ---------------------------------------------------------------------------------------------
// Commands. Each returns the process exit code.

inline int cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
  ManifestEntry entry{"gen-data"};
  LayeredModel model;
  if (!cfg.model_path.empty()) {
    model = load_run_model(cfg, entry);
  } else {
    model = make_planted_model(model_config(cfg));
  }
  const std::uint64_t data_seed = derive_seed(cfg.seed, Stream::data);
  const ScoringFunction scorer = ScoringFunction::planted(model, cfg.noise_sd, cfg.scorer);
  const auto data = generate_constraint_set(model, scorer, cfg.n, data_seed, cfg.job_count());

  fs::create_directories(cfg.out());
  io::save_model(model, cfg.out() / "model.json");
  save_constraint_set(data, cfg.out() / "constraint.jsonl");

  std::size_t positive = 0;
  for (const auto& e : data) positive += e.score > 0.5;
  entry.seeds = {{"model", model.seed}, {"data", data_seed}};
  entry.outputs = {"model.json", "constraint.jsonl"};
  entry.results = {{"n", data.size()}, {"positive_fraction", double(positive) / double(data.size())}};
  write_manifest(cfg, entry);
  log << "gen-data: wrote " << data.size() << " examples (m=" << model.m() << ", d=" << model.d()
      << ", T=" << model.T() << ") to " << cfg.out().string() << "\n";
  return 0;
}

inline int cmd_train_probes(const RunConfig& cfg, std::ostream& log) {
  ManifestEntry entry{"train-probes"};
  if (cfg.nonlinearity != Nonlinearity::sigmoid) {
    throw PreconditionError("train-probes: field \"nonlinearity\": training supports sigmoid only");
  }
  const LayeredModel model = load_run_model(cfg, entry);
  const auto data = load_run_data(cfg, model, entry);
  const std::uint64_t split_seed = derive_seed(cfg.seed, Stream::split);
  const auto [train, valid] = split(data, cfg.train_frac, split_seed);
  const auto train_x = features_of(train), valid_x = features_of(valid);
  const auto train_s = scores_of(train), valid_s = scores_of(valid);
  const auto train_acts = extract_activations(model, train_x, cfg.job_count());
  const std::vector<std::vector<Vector>> valid_acts =
      valid_x.empty() ? std::vector<std::vector<Vector>>{} : extract_activations(model, valid_x, cfg.job_count());
  const auto labels = binarize(valid_s);

  const auto layers = cfg.layers();
  std::vector<std::optional<Probe>> trained(layers.size());
  std::vector<double> accuracy(layers.size(), std::numeric_limits<double>::quiet_NaN());
  parallel_for(layers.size(), cfg.job_count(), [&](std::size_t i) {
    const int t = layers[i];
    TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.learning_rate = cfg.learning_rate;
    tc.optimizer = cfg.optimizer;
    tc.seed = derive_seed(cfg.seed, Stream::train, static_cast<std::uint64_t>(t));
    Probe p = train_probe(train_acts[static_cast<std::size_t>(t)], train_s, tc, t);
    if (!valid_acts.empty()) accuracy[i] = probe_accuracy(p, valid_acts[static_cast<std::size_t>(t)], labels);
    trained[i] = std::move(p);
  });

  fs::create_directories(cfg.out() / "probes");
  Json acc = Json::object();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string name = "layer_" + std::to_string(layers[i]) + ".json";
    io::save_probe(*trained[i], cfg.out() / "probes" / name);
    entry.outputs.push_back("probes/" + name);
    acc[std::to_string(layers[i])] = std::isnan(accuracy[i]) ? Json(nullptr) : Json(accuracy[i]);
    entry.seeds["train_layer_" + std::to_string(layers[i])] = trained[i]->train_meta()->config.seed;
    log << "train-probes: layer " << layers[i] << " validation accuracy " << accuracy[i] << "\n";
  }
  entry.seeds["split"] = split_seed;
  entry.results = {{"n_train", train.size()}, {"n_validation", valid.size()}, {"validation_accuracy", acc}};
  write_manifest(cfg, entry);
  return 0;
}

/// Per-input outcome of a controlled run.
struct RunRecord {
  Trajectory traj;
  bool unsafe = false;
  double attribute = 0.0;
};

inline std::vector<RunRecord> run_policy(const LayeredModel& model, const ControlPolicy& policy,
                                         const ScoringFunction& attribute, std::span<const Vector> inputs,
                                         unsigned jobs) {
  policy.validate(model);
  std::vector<RunRecord> out(inputs.size());
  parallel_for(inputs.size(), jobs, [&](std::size_t i) {
    Trajectory traj = controlled_forward(model, inputs[i], policy);
    Vector final_state = traj.states.back();
    if (!traj.interventions.empty() && traj.interventions.back().layer == model.T()) {
      final_state += traj.interventions.back().theta;
    }
    out[i].unsafe = unsafe_decision(traj);
    out[i].attribute = attribute(final_state);
    out[i].traj = std::move(traj);
  });
  return out;
}

inline std::string theta_text(const Vector& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += format_double(v[i]);
  }
  return s;
}

/// run.csv header; the theta column (space-separated components) only with emit_theta.
inline std::string run_csv_header(bool emit_theta) {
  return std::string("input,layer,case,pre_score,post_score,norm,unsafe,attribute") +
         (emit_theta ? ",theta" : "") + "\n";
}

inline int cmd_control_run(const RunConfig& cfg, std::ostream& log) {
  ManifestEntry entry{"control-run"};
  const LayeredModel model = load_run_model(cfg, entry);
  const auto data = load_run_data(cfg, model, entry);
  ControlPolicy policy{cfg.layers(), load_policy_probes(cfg, model, &entry), cfg.control_mode()};
  const auto inputs = features_of(data);
  const auto records =
      run_policy(model, policy, ScoringFunction::planted(model, 0.0, cfg.scorer), inputs, cfg.job_count());

  std::ostringstream csv;
  csv << run_csv_header(cfg.emit_theta);
  std::size_t unsafe = 0, triggered = 0, in_band = 0, total = 0;
  const auto band = audit_band(policy.mode);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    unsafe += r.unsafe;
    for (const auto& iv : r.traj.interventions) {
      const Probe& probe = policy.probes.at(iv.layer);
      const double pre = probe.score(r.traj.states[static_cast<std::size_t>(iv.layer)]);
      const double post = probe.score(r.traj.controlled_state(iv.layer));
      ++total;
      triggered += iv.triggered();
      if (band && post >= band->alpha_min - kAuditTolerance && post <= band->alpha_max + kAuditTolerance) ++in_band;
      csv << i << ',' << iv.layer << ',' << to_string(iv.kind) << ',' << format_double(pre) << ','
          << format_double(post) << ',' << format_double(iv.norm) << ',' << (r.unsafe ? 1 : 0) << ','
          << format_double(r.attribute);
      if (cfg.emit_theta) csv << ',' << theta_text(iv.theta);
      csv << '\n';
    }
    if (r.traj.interventions.empty()) {
      csv << i << ",,none,,,0.0," << (r.unsafe ? 1 : 0) << ',' << format_double(r.attribute)
          << (cfg.emit_theta ? "," : "") << '\n';
    }
  }
  fs::create_directories(cfg.out());
  io::write_text(cfg.out() / "run.csv", csv.str());

  const double n = static_cast<double>(records.size());
  const double frac = static_cast<double>(unsafe) / n;
  entry.outputs = {"run.csv"};
  entry.results = {{"mode", std::string(mode_name(policy.mode))},
                   {"n", records.size()},
                   {"unsafe_fraction", frac},
                   {"unsafe_se", binomial_se(frac, records.size())},
                   {"trigger_rate", total ? double(triggered) / double(total) : 0.0},
                   {"in_range_fraction", band && total ? Json(double(in_band) / double(total)) : Json(nullptr)}};
  write_manifest(cfg, entry);
  log << "control-run: mode " << mode_name(policy.mode) << ", unsafe fraction " << frac << " over "
      << records.size() << " inputs\n";
  return 0;
}

inline int cmd_sweep_alpha(const RunConfig& cfg, std::ostream& log) {
  ManifestEntry entry{"sweep-alpha"};
  const LayeredModel model = load_run_model(cfg, entry);
  const auto data = load_run_data(cfg, model, entry);
  const auto layers = cfg.layers();
  const auto probes = load_policy_probes(cfg, model, &entry);
  for (double a : cfg.alphas) require_inside_image(cfg.nonlinearity, a, "alphas entry");
  const auto ranges = sweep_ranges(cfg.alphas, cfg.half_width);
  const auto inputs = features_of(data);
  const SweepResult res = alpha_sweep(model, probes, layers, ranges, inputs, cfg.job_count());

  fs::create_directories(cfg.out());
  io::write_text(cfg.out() / "sweep.csv", sweep_csv(res));
  Json summary = sweep_json(res);
  std::vector<double> mids;
  for (const auto& r : ranges) mids.push_back(0.5 * (r.alpha_min + r.alpha_max));
  summary["spearman"] = ranges.size() >= 2 ? Json(spearman(mids, res.unsafe_fraction)) : Json(nullptr);
  io::write_json(cfg.out() / "sweep.json", summary);
  entry.outputs = {"sweep.csv", "sweep.json"};
  entry.results = {{"settings", ranges.size()}, {"spearman", summary["spearman"]}};
  write_manifest(cfg, entry);
  log << "sweep-alpha: " << ranges.size() << " settings over " << inputs.size() << " inputs";
  if (ranges.size() >= 2) log << ", spearman " << summary["spearman"].get<double>();
  log << "\n";
  return 0;
}

/// One parsed row of run.csv.
struct RunRow {
  std::size_t input = 0;
  int layer = 0;
  std::string kind;
  double post_score = 0.0;
  double norm = 0.0;
  std::optional<Vector> theta;
};

inline std::vector<RunRow> load_run_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": cannot open");
  std::string line;
  std::getline(in, line);
  const bool has_theta = line.find(",theta") != std::string::npos;
  if (line.rfind("input,layer,case", 0) != 0) throw FormatError(path.string() + ":1: unexpected header");
  std::vector<RunRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    if (line.back() == ',') cols.emplace_back();
    const std::size_t want = has_theta ? 9 : 8;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (cols.size() != want) throw FormatError(where + ": expected " + std::to_string(want) + " columns");
    if (cols[1].empty()) continue;  // no controlled layers
    try {
      RunRow r;
      r.input = std::stoull(cols[0]);
      r.layer = std::stoi(cols[1]);
      r.kind = cols[2];
      r.post_score = std::stod(cols[4]);
      r.norm = std::stod(cols[5]);
      if (has_theta) {
        std::stringstream ts(cols[8]);
        std::vector<double> v;
        std::string tok;
        while (ts >> tok) v.push_back(std::stod(tok));
        r.theta = Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
      }
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError(where + ": malformed number");
    }
  }
  return rows;
}

/// Replays run.csv against the model: states are rebuilt as x_{t+1} = l(x_t + theta_t) from the
/// recorded thetas, then every record is re-scored and sent through the matching oracle.
/// Without a theta column the thetas are recomputed with the controller instead.
inline int cmd_verify(const RunConfig& cfg, std::ostream& log) {
  ManifestEntry entry{"verify"};
  const LayeredModel model = load_run_model(cfg, entry);
  const auto data = load_run_data(cfg, model, entry);
  ControlPolicy policy{cfg.layers(), load_policy_probes(cfg, model, &entry), cfg.control_mode()};
  policy.validate(model);
  const auto inputs = features_of(data);

  // thetas[i][t]
  std::vector<std::map<int, Vector>> thetas(inputs.size());
  std::vector<std::map<int, RunRow>> recorded(inputs.size());
  const fs::path run_path = cfg.out() / "run.csv";
  std::string theta_source = "recomputed";
  if (fs::exists(run_path)) {
    entry.input("run", run_path);
    const auto rows = load_run_csv(run_path);
    for (const auto& r : rows) {
      if (r.input >= inputs.size()) throw FormatError(run_path.string() + ": input index beyond constraint set");
      if (r.theta) {
        check_dim("run.csv theta", model.d(), r.theta->size());
        thetas[r.input][r.layer] = *r.theta;
        theta_source = "run.csv";
      }
      recorded[r.input][r.layer] = r;
    }
  }
  if (theta_source == "recomputed") {
    parallel_for(inputs.size(), cfg.job_count(), [&](std::size_t i) {
      for (const auto& iv : controlled_forward(model, inputs[i], policy).interventions) thetas[i][iv.layer] = iv.theta;
    });
  }

  const auto band = audit_band(policy.mode);
  const std::uint64_t oracle_seed = derive_seed(cfg.seed, Stream::oracle);
  struct Check {
    std::size_t input;
    int layer;
    std::string kind;
    double post = 0.0;
    bool pass = true;
    std::string why;
    std::optional<OracleReport> oracle;
  };
  std::vector<std::vector<Check>> checks(inputs.size());
  const OracleTolerances tol;
  parallel_for(inputs.size(), cfg.job_count(), [&](std::size_t i) {
    Vector x = model.embed * inputs[i];
    for (int t = 1; t <= model.T(); ++t) {
      x = model.layers[static_cast<std::size_t>(t - 1)].apply(x);
      const auto it = thetas[i].find(t);
      if (policy.probes.count(t) == 0) continue;
      const Probe& probe = policy.probes.at(t);
      const Vector theta = it == thetas[i].end() ? Vector::Zero(x.size()) : it->second;
      Check c{i, t, theta.norm() == 0.0 ? "none" : "triggered", 0.0, true, {}, std::nullopt};
      const double pre = probe.score(x);
      c.post = probe.score(x + theta);
      auto fail = [&](const std::string& why) {
        c.pass = false;
        if (c.why.empty()) c.why = why;
      };
      if (const auto rec = recorded[i].find(t); rec != recorded[i].end()) {
        if (rec->second.post_score != c.post) fail("recorded post_score differs from recomputed score");
      }
      const Rng::result_type seed = substream(oracle_seed, i * 1000 + static_cast<std::size_t>(t))();
      if (const auto* b = std::get_if<Budget>(&policy.mode)) {
        const auto rep = verify_budget(probe, x, *b, theta, cfg.n_samples, seed);
        if (!rep.certified) fail("budget oracle did not certify theta");
        c.oracle = rep;
      } else if (band) {
        if (!(c.post >= band->alpha_min - kAuditTolerance && c.post <= band->alpha_max + kAuditTolerance)) {
          fail("post score outside the target band");
        }
        const bool in_before = band->contains(pre);
        const bool pinned = std::holds_alternative<PinMode>(policy.mode);
        if (!pinned && in_before && theta.norm() != 0.0) fail("nonzero intervention on an in-range state");
        if (!pinned && !in_before && theta.norm() == 0.0) fail("no intervention on an out-of-range state");
        if (theta.norm() != 0.0) {
          ScoreRange r = *band;
          if (!std::isfinite(r.alpha_min)) {
            const Image im = image(probe.nonlinearity());
            r.alpha_min = std::nextafter(im.lower, im.upper);
          }
          const auto rep = verify_min_norm_range(probe, x, r, theta, cfg.n_samples, seed, tol);
          if (!rep.feasible) fail("oracle: theta infeasible");
          else if (rep.norm_gap > tol.optimality) fail("oracle: found a cheaper feasible theta");
          c.oracle = rep;
        }
      } else if (theta.norm() != 0.0) {
        fail("nonzero intervention with mode off");
      }
      checks[i].push_back(std::move(c));
      x += theta;
    }
  });

  std::size_t n_checks = 0, n_failed = 0, n_oracle = 0;
  double max_residual = 0.0, max_gap = -std::numeric_limits<double>::infinity();
  Json failures = Json::array();
  std::map<int, std::pair<std::size_t, std::size_t>> per_layer;  // layer -> (checks, passed)
  for (const auto& row : checks) {
    for (const auto& c : row) {
      ++n_checks;
      auto& pl = per_layer[c.layer];
      ++pl.first;
      if (c.pass) ++pl.second;
      if (c.oracle) {
        ++n_oracle;
        max_residual = std::max(max_residual, c.oracle->constraint_residual);
        max_gap = std::max(max_gap, c.oracle->norm_gap);
      }
      if (!c.pass) {
        ++n_failed;
        if (failures.size() < 20) {
          failures.push_back({{"input", c.input}, {"layer", c.layer}, {"post_score", c.post}, {"reason", c.why}});
        }
      }
    }
  }
  Json layers = Json::array();
  for (const auto& [t, pl] : per_layer) {
    layers.push_back({{"layer", t}, {"checks", pl.first}, {"passed", pl.second}});
  }
  const bool passed = n_failed == 0;
  Json report;
  report["passed"] = passed;
  report["mode"] = std::string(mode_name(policy.mode));
  report["theta_source"] = theta_source;
  report["checks"] = n_checks;
  report["failed"] = n_failed;
  report["oracle_checks"] = n_oracle;
  report["samples_per_check"] = cfg.n_samples;
  report["max_constraint_residual"] = max_residual;
  report["max_norm_gap"] = n_oracle ? Json(max_gap) : Json(nullptr);
  report["tolerances"] = {{"feasibility", tol.feasibility}, {"optimality", tol.optimality}, {"audit", kAuditTolerance}};
  report["layers"] = layers;
  report["failures"] = failures;
  fs::create_directories(cfg.out());
  io::write_json(cfg.out() / "verify.json", report);
  entry.seeds = {{"oracle", oracle_seed}};
  entry.outputs = {"verify.json"};
  entry.results = {{"passed", passed}, {"checks", n_checks}, {"failed", n_failed}};
  write_manifest(cfg, entry);
  log << "verify: " << (passed ? "passed" : "FAILED") << " (" << n_checks - n_failed << "/" << n_checks
      << " checks, " << n_oracle << " oracle certifications)\n";
  return passed ? 0 : 3;
}

/// Summarizes whatever artifacts `dir` holds into report.json and a short text block.
inline int cmd_report(const fs::path& dir, std::ostream& out) {
  const fs::path man_path = dir / "manifest.json";
  require_file(man_path, "manifest");
  const Json man = io::read_json(man_path);
  Json report;
  report["version"] = man.value("version", "");
  Json commands = Json::object();
  if (man.contains("commands") && man["commands"].is_object()) {
    for (const auto& [name, e] : man["commands"].items()) commands[name] = e.value("results", Json::object());
  }
  report["commands"] = commands;
  if (fs::exists(dir / "verify.json")) {
    const Json v = io::read_json(dir / "verify.json");
    report["verify"] = {{"passed", v.value("passed", false)}, {"checks", v.value("checks", 0)},
                        {"failed", v.value("failed", 0)}};
  }
  if (fs::exists(dir / "sweep.json")) {
    const Json s = io::read_json(dir / "sweep.json");
    report["sweep"] = {{"baseline", s.value("baseline", Json::object())},
                       {"settings", s.value("settings", Json::array())},
                       {"spearman", s.value("spearman", Json(nullptr))}};
  }
  io::write_json(dir / "report.json", report);

  out << "liseco report for " << dir.string() << "\n";
  for (const auto& [name, res] : commands.items()) out << "  " << name << ": " << res.dump() << "\n";
  if (report.contains("sweep")) {
    out << "  sweep (alpha_min, alpha_max -> unsafe fraction +- se):\n";
    for (const auto& s : report["sweep"]["settings"]) {
      out << "    [" << s["alpha_min"].get<double>() << ", " << s["alpha_max"].get<double>() << "] -> "
          << s["unsafe_fraction"].get<double>() << " +- " << s["unsafe_se"].get<double>() << "\n";
    }
  }
  if (report.contains("verify")) {
    out << "  verify: " << (report["verify"]["passed"].get<bool>() ? "passed" : "FAILED") << "\n";
  }
  return 0;
}

}  // namespace liseco::cli
