// Experiment driver: run / sweep / standalone / diagnose / plotdata.
// Exit codes: 0 ok, 2 config error, 3 training divergence, 4 missing artifact.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "osfl/experiment.hpp"

namespace {

osfl::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw osfl::ConfigError("cannot open config file: " + path);
  try {
    return osfl::json::parse(in);
  } catch (const osfl::json::exception& e) {
    throw osfl::ConfigError(std::string("config parse error: ") + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-shot vs multi-round federated averaging simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  std::optional<std::uint64_t> seed_override;
  unsigned jobs = 1;

  auto add_common = [&](CLI::App* sub, bool needs_config = true) {
    if (needs_config) sub->add_option("--config", config_path, "experiment config JSON")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed-override", seed_override, "override master_seed");
    sub->add_option("--jobs", jobs, "worker pool size (accepted; runs are cheap enough serially)");
  };

  auto* run = app.add_subcommand("run", "run one experiment and write its metrics bundle");
  add_common(run);

  auto* sweep = app.add_subcommand("sweep", "round sweep at fixed total local steps");
  add_common(sweep);
  std::vector<std::size_t> T_values{1, 2, 3, 4, 5};
  std::size_t total_steps = 0;
  sweep->add_option("--rounds", T_values, "T values to sweep");
  sweep->add_option("--total-steps", total_steps, "fixed total local steps (default: config T*k)");

  auto* standalone = app.add_subcommand("standalone", "evaluate local models vs the one-shot global model");
  add_common(standalone);

  auto* diagnose = app.add_subcommand("diagnose", "estimators over two checkpoints + batch manifest");
  std::string w0_path, wfinal_path, manifest_path;
  diagnose->add_option("--w0", w0_path, "initial checkpoint (.osfsvec)")->required();
  diagnose->add_option("--w-final", wfinal_path, "final checkpoint (.osfsvec)")->required();
  diagnose->add_option("--batch-manifest", manifest_path, "batch manifest JSON")->required();
  diagnose->add_option("--out", out_dir, "output directory");

  auto* plotdata = app.add_subcommand("plotdata", "emit figure CSVs from a metrics bundle");
  std::string bundle_path, tag;
  plotdata->add_option("--bundle", bundle_path, "metrics.json from a previous run")->required();
  plotdata->add_option("--tag", tag, "figure tag: fig2-analog | fig4-analog | fig6-analog")->required();
  plotdata->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    std::filesystem::path out(out_dir);
    if (run->parsed()) {
      osfl::run_experiment(read_json(config_path), seed_override, out);
      std::cout << "wrote " << (out / "metrics.json").string() << "\n";
    } else if (sweep->parsed()) {
      osfl::json cfg = read_json(config_path);
      if (total_steps == 0) {
        osfl::ExperimentConfig c = osfl::parse_config(cfg);
        total_steps = c.fl.total_steps();
      }
      osfl::json result = osfl::sweep_rounds(cfg, T_values, total_steps, seed_override);
      std::filesystem::create_directories(out);
      std::ofstream f(out / "sweep.json");
      f << result.dump(2) << "\n";
      std::ofstream csv(out / "fig7-analog.csv");
      csv.precision(17);
      csv << "T,k,final_holdout_loss,final_train_loss\n";
      for (const auto& pt : result.at("points")) {
        csv << pt.at("T").get<std::size_t>() << "," << pt.at("k").get<std::size_t>() << ",";
        if (pt.at("multi_round").contains("final_holdout_loss"))
          csv << pt.at("multi_round").at("final_holdout_loss").get<double>();
        csv << "," << pt.at("multi_round").at("final_train_loss").get<double>() << "\n";
      }
      std::cout << "wrote " << (out / "sweep.json").string() << "\n";
    } else if (standalone->parsed()) {
      osfl::json result = osfl::standalone_eval(read_json(config_path), seed_override);
      std::filesystem::create_directories(out);
      std::ofstream f(out / "standalone.json");
      f << result.dump(2) << "\n";
      std::cout << "wrote " << (out / "standalone.json").string() << "\n";
    } else if (diagnose->parsed()) {
      osfl::json rep = osfl::diagnose_checkpoints(w0_path, wfinal_path, manifest_path);
      std::filesystem::create_directories(out);
      std::ofstream f(std::filesystem::path(out_dir) / "diagnostics.json");
      f << rep.dump(2) << "\n";
      std::cout << rep.dump(2) << "\n";
    } else if (plotdata->parsed()) {
      osfl::emit_plotdata(read_json(bundle_path), tag, out);
      std::cout << "wrote " << (std::filesystem::path(out_dir) / (tag + ".csv")).string() << "\n";
    }
  } catch (const osfl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const osfl::TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 3;
  } catch (const osfl::MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
