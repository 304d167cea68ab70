#include "liseco/io.hpp"
#include "liseco/random.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace liseco;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "liseco_test_io";
  fs::create_directories(dir);
  return dir;
}

template <typename Fn>
std::string format_error(Fn&& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Io, FormatDoubleRoundTrips) {
  Rng rng(1);
  std::uniform_real_distribution<double> u(-300, 300);
  for (int i = 0; i < 2000; ++i) {
    const double v = std::pow(10.0, u(rng)) * (i % 2 ? -1 : 1);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(1.0), "1.0");
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(format_double(std::nan("")), "null");
}

TEST(Io, DumpJsonKeepsFullPrecision) {
  const Json j = {{"a", 0.1}, {"v", {1.0, 2.5, 1e-300}}, {"n", 3}};
  const std::string s = dump_json(j, 2);
  EXPECT_NE(s.find("0.10000000000000001"), std::string::npos);
  EXPECT_NE(s.find("[1.0, 2.5, 1e-300]"), std::string::npos);
  EXPECT_NE(dump_json(j).find("[1.0,2.5,1e-300]"), std::string::npos);
  EXPECT_EQ(Json::parse(s), j);
  EXPECT_EQ(Json::parse(dump_json(j)), j);
}

TEST(Io, ProbeRoundTrip) {
  Rng rng(2);
  const Probe plain(4, standard_normal(7, rng), std::nullopt, Nonlinearity::tanh);
  const fs::path p = temp_dir() / "probe.json";
  io::save_probe(plain, p);
  const Probe back = io::load_probe(p);
  EXPECT_EQ(back.layer(), 4);
  EXPECT_EQ(back.weights(), plain.weights());
  EXPECT_FALSE(back.bias().has_value());
  EXPECT_EQ(back.nonlinearity(), Nonlinearity::tanh);
  EXPECT_FALSE(back.train_meta().has_value());

  TrainMeta meta{TrainConfig{}, 1600, 0.69, 0.2};
  meta.config.seed = 12345678901234567ull;
  const Probe trained(3, standard_normal(5, rng), 0.125, Nonlinearity::sigmoid, meta);
  io::save_probe(trained, p);
  const Probe t2 = io::load_probe(p);
  EXPECT_EQ(t2.bias(), 0.125);
  ASSERT_TRUE(t2.train_meta().has_value());
  EXPECT_EQ(t2.train_meta()->config.seed, 12345678901234567ull);
  EXPECT_EQ(t2.train_meta()->final_loss, 0.2);
  EXPECT_EQ(t2.train_meta()->n_examples, 1600u);
  // Saving again yields identical bytes.
  const fs::path q = temp_dir() / "probe2.json";
  io::save_probe(t2, q);
  EXPECT_EQ(io::read_text(p), io::read_text(q));
}

TEST(Io, ProbeArrays) {
  Rng rng(3);
  Json arr = Json::array();
  for (int t = 1; t <= 3; ++t) arr.push_back(io::to_json(Probe(t, standard_normal(4, rng))));
  const fs::path p = temp_dir() / "probes.json";
  io::write_json(p, arr);
  EXPECT_EQ(io::load_probes(p).size(), 3u);
  io::write_json(p, Json{{"probes", arr}});
  EXPECT_EQ(io::load_probes(p)[2].layer(), 3);
  EXPECT_THROW(io::load_probe(p), FormatError);
}

TEST(Io, ProbeSchemaErrorsNameTheField) {
  Json j = io::to_json(Probe(1, Vector::Ones(3)));
  j["dim"] = 4;
  EXPECT_NE(format_error([&] { io::probe_from_json(j, "p.json"); }).find("\"weights\""), std::string::npos);
  j = io::to_json(Probe(1, Vector::Ones(3)));
  j["nonlinearity"] = "relu";
  EXPECT_NE(format_error([&] { io::probe_from_json(j, "p.json"); }).find("\"nonlinearity\""), std::string::npos);
  j = io::to_json(Probe(1, Vector::Ones(3)));
  j.erase("layer");
  const std::string msg = format_error([&] { io::probe_from_json(j, "p.json"); });
  EXPECT_NE(msg.find("p.json"), std::string::npos);
  EXPECT_NE(msg.find("\"layer\""), std::string::npos);
  j = io::to_json(Probe(1, Vector::Ones(3)));
  j["weights"] = {0.0, 0.0, 0.0};
  EXPECT_FALSE(format_error([&] { io::probe_from_json(j, "p.json"); }).empty());
}

TEST(Io, ModelRoundTrip) {
  PlantedModelConfig cfg;
  cfg.m = 5;
  cfg.d = 6;
  cfg.T = 4;
  cfg.seed = 99;
  const LayeredModel model = make_exact_probe_model(cfg, 2);
  const fs::path p = temp_dir() / "model.json";
  io::save_model(model, p);
  const LayeredModel back = io::load_model(p);
  EXPECT_EQ(back.embed, model.embed);
  EXPECT_EQ(back.unembed, model.unembed);
  EXPECT_EQ(back.seed, 99u);
  ASSERT_EQ(back.T(), model.T());
  for (int t = 0; t < model.T(); ++t) {
    EXPECT_EQ(back.layers[t].kind, model.layers[t].kind);
    EXPECT_EQ(back.layers[t].A, model.layers[t].A);
    EXPECT_EQ(back.layers[t].c, model.layers[t].c);
  }
  Rng rng(4);
  const Vector in = standard_normal(5, rng);
  EXPECT_EQ(forward(back, in).output_logits, forward(model, in).output_logits);
  const fs::path q = temp_dir() / "model2.json";
  io::save_model(back, q);
  EXPECT_EQ(io::read_text(p), io::read_text(q));
}

TEST(Io, ModelSchemaErrors) {
  PlantedModelConfig cfg;
  cfg.m = 3;
  cfg.d = 4;
  cfg.T = 2;
  Json j = io::to_json(make_planted_model(cfg));
  j["layers"][1]["c"] = {1.0};
  EXPECT_NE(format_error([&] { io::model_from_json(j, "m.json"); }).find("layers[1]"), std::string::npos);
  j = io::to_json(make_planted_model(cfg));
  j["embed"][2] = {1.0};
  EXPECT_NE(format_error([&] { io::model_from_json(j, "m.json"); }).find("\"embed\""), std::string::npos);
  j = io::to_json(make_planted_model(cfg));
  j["unsafe_index"] = 9;
  EXPECT_FALSE(format_error([&] { io::model_from_json(j, "m.json"); }).empty());
  j = io::to_json(make_planted_model(cfg));
  j["T"] = 3;
  EXPECT_NE(format_error([&] { io::model_from_json(j, "m.json"); }).find("\"layers\""), std::string::npos);
}

TEST(Io, InterventionRoundTrip) {
  Vector theta(3);
  theta << 0.1, -2.0, 1e-17;
  const Intervention iv = Intervention::make(theta, InterventionCase::above_max, 5);
  const Json with = io::to_json(iv, true);
  const Intervention back = io::intervention_from_json(Json::parse(dump_json(with)));
  EXPECT_EQ(back.theta, theta);
  EXPECT_EQ(back.kind, InterventionCase::above_max);
  EXPECT_EQ(back.layer, 5);
  EXPECT_EQ(back.norm, iv.norm);
  EXPECT_FALSE(io::to_json(iv).contains("theta"));
  Json bad = with;
  bad["case"] = "sideways";
  EXPECT_THROW(io::intervention_from_json(bad), FormatError);
}

TEST(Io, OracleReportJson) {
  OracleReport rep;
  rep.feasible = true;
  rep.certified = true;
  rep.method = OracleMethod::exhaustive_grid;
  const Json j = io::to_json(rep);
  EXPECT_EQ(j["method"], "exhaustive_grid");
  EXPECT_TRUE(j["best_norm"].is_null());
}

TEST(Io, ReadJsonErrors) {
  const fs::path p = temp_dir() / "broken.json";
  io::write_text(p, "{\"a\": ");
  EXPECT_THROW(io::read_json(p), FormatError);
  EXPECT_THROW(io::read_json(temp_dir() / "missing.json"), Error);
}
