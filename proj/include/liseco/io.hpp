#pragma once

#include "liseco/controller.hpp"
#include "liseco/json_format.hpp"
#include "liseco/model.hpp"
#include "liseco/oracle.hpp"
#include "liseco/probe.hpp"
#include "liseco/types.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace liseco::io {

namespace fs = std::filesystem;

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

inline Json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw FormatError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
}

inline void write_json(const fs::path& path, const Json& j) { write_text(path, dump_json(j, 2) + "\n"); }

/// Field accessor that reports the document and field on schema violations.
class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail("", "expected a JSON object");
  }

  [[noreturn]] void fail(const std::string& field, const std::string& why) const {
    throw FormatError(where_ + (field.empty() ? "" : ": field \"" + field + "\"") + ": " + why);
  }

  const Json& at(const std::string& field) const {
    if (!j_.contains(field)) fail(field, "missing");
    return j_.at(field);
  }
  bool has(const std::string& field) const { return j_.contains(field) && !j_.at(field).is_null(); }

  long long integer(const std::string& field) const {
    const Json& v = at(field);
    if (!v.is_number_integer()) fail(field, "expected an integer");
    return v.get<long long>();
  }
  std::uint64_t uinteger(const std::string& field) const {
    const Json& v = at(field);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      fail(field, "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }
  bool boolean(const std::string& field) const {
    const Json& v = at(field);
    if (!v.is_boolean()) fail(field, "expected true or false");
    return v.get<bool>();
  }
  double number(const std::string& field) const {
    const Json& v = at(field);
    if (!v.is_number()) fail(field, "expected a number");
    return v.get<double>();
  }
  std::string string(const std::string& field) const {
    const Json& v = at(field);
    if (!v.is_string()) fail(field, "expected a string");
    return v.get<std::string>();
  }
  Vector vector(const std::string& field) const {
    const Json& v = at(field);
    if (!v.is_array()) fail(field, "expected an array of numbers");
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) fail(field, "expected an array of numbers");
      out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
    }
    return out;
  }
  Matrix matrix(const std::string& field, Eigen::Index rows, Eigen::Index cols) const {
    const Json& v = at(field);
    if (!v.is_array() || static_cast<Eigen::Index>(v.size()) != rows) {
      fail(field, "expected " + std::to_string(rows) + " rows");
    }
    Matrix out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const Json& row = v[static_cast<std::size_t>(i)];
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
        fail(field, "row " + std::to_string(i) + " must have " + std::to_string(cols) + " entries");
      }
      for (Eigen::Index k = 0; k < cols; ++k) {
        const Json& e = row[static_cast<std::size_t>(k)];
        if (!e.is_number()) fail(field, "non-numeric entry in row " + std::to_string(i));
        out(i, k) = e.get<double>();
      }
    }
    return out;
  }
  const std::string& where() const { return where_; }

 private:
  const Json& j_;
  std::string where_;
};

inline Json to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Json to_json(const Matrix& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
  return a;
}

// Probe file: {"layer", "dim", "weights", "bias", "nonlinearity", "train_meta"}.

inline Json to_json(const Probe& p) {
  Json j;
  j["layer"] = p.layer();
  j["dim"] = p.dim();
  j["weights"] = to_json(p.weights());
  j["bias"] = p.bias() ? Json(*p.bias()) : Json(nullptr);
  j["nonlinearity"] = std::string(to_string(p.nonlinearity()));
  Json meta = Json::object();
  if (const auto& m = p.train_meta()) {
    meta["epochs"] = m->config.epochs;
    meta["learning_rate"] = m->config.learning_rate;
    meta["optimizer"] = std::string(to_string(m->config.optimizer));
    meta["seed"] = m->config.seed;
    meta["fit_bias"] = m->config.fit_bias;
    meta["n_examples"] = m->n_examples;
    meta["initial_loss"] = m->initial_loss;
    meta["final_loss"] = m->final_loss;
  }
  j["train_meta"] = meta;
  return j;
}

inline Probe probe_from_json(const Json& j, const std::string& where = "probe") {
  Reader r(j, where);
  const auto layer = static_cast<int>(r.integer("layer"));
  const auto dim = r.integer("dim");
  Vector w = r.vector("weights");
  if (w.size() != dim) r.fail("weights", "length " + std::to_string(w.size()) + " != dim " + std::to_string(dim));
  std::optional<double> bias;
  if (r.has("bias")) bias = r.number("bias");
  const auto nl = parse_nonlinearity(r.string("nonlinearity"));
  if (!nl) r.fail("nonlinearity", "expected sigmoid, identity or tanh");
  std::optional<TrainMeta> meta;
  if (j.contains("train_meta") && j["train_meta"].is_object() && !j["train_meta"].empty()) {
    Reader m(j["train_meta"], where + ": train_meta");
    TrainMeta tm;
    tm.config.epochs = static_cast<int>(m.integer("epochs"));
    tm.config.learning_rate = m.number("learning_rate");
    const auto opt = parse_optimizer(m.string("optimizer"));
    if (!opt) m.fail("optimizer", "expected adam or sgd");
    tm.config.optimizer = *opt;
    tm.config.seed = m.uinteger("seed");
    tm.config.fit_bias = m.boolean("fit_bias");
    tm.n_examples = static_cast<std::size_t>(m.integer("n_examples"));
    tm.initial_loss = m.number("initial_loss");
    tm.final_loss = m.number("final_loss");
    meta = tm;
  }
  try {
    return Probe(layer, std::move(w), bias, *nl, meta);
  } catch (const Error& e) {
    throw FormatError(where + ": " + e.what());
  }
}

inline void save_probe(const Probe& p, const fs::path& path) { write_json(path, to_json(p)); }

/// Accepts a single probe object, an array of probes, or {"probes": [...]}.
inline std::vector<Probe> load_probes(const fs::path& path) {
  const Json j = read_json(path);
  std::vector<Probe> out;
  const Json* arr = nullptr;
  if (j.is_array()) arr = &j;
  else if (j.is_object() && j.contains("probes")) arr = &j["probes"];
  if (!arr) {
    out.push_back(probe_from_json(j, path.string()));
    return out;
  }
  for (std::size_t i = 0; i < arr->size(); ++i) {
    out.push_back(probe_from_json((*arr)[i], path.string() + "[" + std::to_string(i) + "]"));
  }
  return out;
}

inline Probe load_probe(const fs::path& path) {
  auto probes = load_probes(path);
  if (probes.size() != 1) throw FormatError(path.string() + ": expected exactly one probe");
  return std::move(probes.front());
}

// Model file: {"m", "d", "T", "k", "unsafe_index", "embed", "layers", "unembed", "seed"}.

inline Json to_json(const LayeredModel& model) {
  Json j;
  j["m"] = model.m();
  j["d"] = model.d();
  j["T"] = model.T();
  j["k"] = model.k();
  j["unsafe_index"] = model.unsafe_index;
  j["embed"] = to_json(model.embed);
  Json layers = Json::array();
  for (const auto& l : model.layers) {
    Json lj;
    lj["kind"] = std::string(to_string(l.kind));
    lj["A"] = l.kind == LayerKind::identity ? Json::array() : to_json(l.A);
    lj["c"] = l.kind == LayerKind::identity ? Json::array() : to_json(l.c);
    layers.push_back(lj);
  }
  j["layers"] = layers;
  j["unembed"] = to_json(model.unembed);
  j["seed"] = model.seed;
  return j;
}

inline LayeredModel model_from_json(const Json& j, const std::string& where = "model") {
  Reader r(j, where);
  const auto m = r.integer("m"), d = r.integer("d"), T = r.integer("T"), k = r.integer("k");
  if (m < 1 || d < 2 || T < 2 || k < 2) r.fail("", "dimensions must satisfy m>=1, d>=2, T>=2, k>=2");
  LayeredModel model;
  model.unsafe_index = static_cast<int>(r.integer("unsafe_index"));
  model.seed = r.has("seed") ? r.uinteger("seed") : 0;
  model.embed = r.matrix("embed", d, m);
  model.unembed = r.matrix("unembed", k, d);
  const Json& layers = r.at("layers");
  if (!layers.is_array() || static_cast<long long>(layers.size()) != T) {
    r.fail("layers", "expected an array of T = " + std::to_string(T) + " layers");
  }
  for (std::size_t t = 0; t < layers.size(); ++t) {
    Reader lr(layers[t], where + ": layers[" + std::to_string(t) + "]");
    Layer l;
    const auto kind = parse_layer_kind(lr.string("kind"));
    if (!kind) lr.fail("kind", "expected tanh_residual or identity");
    l.kind = *kind;
    if (l.kind == LayerKind::tanh_residual) {
      l.A = lr.matrix("A", d, d);
      l.c = lr.vector("c");
      if (l.c.size() != d) lr.fail("c", "expected length d = " + std::to_string(d));
    }
    model.layers.push_back(std::move(l));
  }
  try {
    model.validate();
  } catch (const Error& e) {
    throw FormatError(where + ": " + e.what());
  }
  return model;
}

inline void save_model(const LayeredModel& model, const fs::path& path) { write_json(path, to_json(model)); }

inline LayeredModel load_model(const fs::path& path) { return model_from_json(read_json(path), path.string()); }

// Intervention record: {"layer", "case", "norm", "theta"?}.

inline Json to_json(const Intervention& iv, bool include_theta = false) {
  Json j;
  j["layer"] = iv.layer;
  j["case"] = std::string(to_string(iv.kind));
  j["norm"] = iv.norm;
  if (include_theta) j["theta"] = to_json(iv.theta);
  return j;
}

inline Intervention intervention_from_json(const Json& j, const std::string& where = "intervention") {
  Reader r(j, where);
  Intervention iv;
  iv.layer = static_cast<int>(r.integer("layer"));
  const auto c = parse_intervention_case(r.string("case"));
  if (!c) r.fail("case", "unknown intervention case");
  iv.kind = *c;
  iv.norm = r.number("norm");
  if (r.has("theta")) iv.theta = r.vector("theta");
  return iv;
}

inline Json to_json(const OracleReport& rep) {
  Json j;
  j["feasible"] = rep.feasible;
  j["constraint_residual"] = rep.constraint_residual;
  j["norm_gap"] = rep.norm_gap;
  j["objective_gap"] = rep.objective_gap;
  j["best_norm"] = std::isfinite(rep.best_norm) ? Json(rep.best_norm) : Json(nullptr);
  j["samples"] = rep.samples;
  j["method"] = std::string(to_string(rep.method));
  j["certified"] = rep.certified;
  return j;
}

}  // namespace liseco::io
