#include "cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>
#include <typeinfo>

namespace {

using namespace liseco;

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const RangeError*>(&e)) return "range";
  if (dynamic_cast<const ZeroDirectionError*>(&e)) return "zero_direction";
  if (dynamic_cast<const TrainingError*>(&e)) return "training";
  if (dynamic_cast<const PreconditionError*>(&e)) return "precondition";
  if (dynamic_cast<const Error*>(&e)) return "error";
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return "io";
  return "internal";
}

int report_error(const std::string& kind, const std::string& command, const std::string& message, int code) {
  Json j{{"error", kind}, {"command", command}, {"message", message}};
  std::cerr << j.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Closed-form layer activation control with linear probes"};
  app.set_version_flag("--version", cli::kVersion);
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; flags override its keys")->check(CLI::ExistingFile);

  // Every config key is also a flag of the same name. --out is the short form of --output_dir.
  std::map<std::string, std::string> flags;
  for (const auto& key : cli::config_keys()) {
    app.add_option("--" + key, flags[key], "config key " + key)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
  std::string out_flag;
  app.add_option("--out", out_flag, "output directory (same as --output_dir)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  bool emit_theta = false;
  app.add_flag("--emit-theta", emit_theta, "write theta vectors into run.csv");

  auto* gen = app.add_subcommand("gen-data", "build the planted model and write the constraint set");
  auto* train = app.add_subcommand("train-probes", "fit one probe per control layer");
  auto* run = app.add_subcommand("control-run", "controlled inference over the constraint-set inputs");
  auto* sweep = app.add_subcommand("sweep-alpha", "unsafe fraction as a function of the allowed range");
  auto* verify = app.add_subcommand("verify", "re-check run.csv against the min-norm oracle");
  auto* report = app.add_subcommand("report", "summarize the artifacts of a run directory");
  std::string report_dir;
  report->add_option("dir", report_dir, "run directory (defaults to the configured output_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", "", e.what(), 2);
  }

  std::string command;
  for (auto* sub : {gen, train, run, sweep, verify, report}) {
    if (sub->parsed()) command = sub->get_name();
  }

  try {
    cli::RunConfig cfg;
    if (!config_path.empty()) cli::apply_json(cfg, io::read_json(config_path));
    Json overrides = Json::object();
    for (const auto& [key, text] : flags) {
      if (app.count("--" + key)) overrides[key] = cli::flag_value(key, text);
    }
    if (app.count("--out")) overrides["output_dir"] = out_flag;
    if (emit_theta) overrides["emit_theta"] = true;
    cli::apply_json(cfg, overrides);
    cfg.validate();

    if (command == "gen-data") return cli::cmd_gen_data(cfg, std::cout);
    if (command == "train-probes") return cli::cmd_train_probes(cfg, std::cout);
    if (command == "control-run") return cli::cmd_control_run(cfg, std::cout);
    if (command == "sweep-alpha") return cli::cmd_sweep_alpha(cfg, std::cout);
    if (command == "verify") return cli::cmd_verify(cfg, std::cout);
    return cli::cmd_report(report_dir.empty() ? cfg.out() : std::filesystem::path(report_dir), std::cout);
  } catch (const std::exception& e) {
    return report_error(error_kind(e), command, e.what(), 1);
  }
}
