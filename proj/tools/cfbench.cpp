#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "cflow/bench/experiment.hpp"

using namespace cflow::bench;

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path);
  return nlohmann::json::parse(in);
}

void print(const ResultTable& t) {
  for (const ResultRow& r : t.rows) {
    std::cout << r.experiment << "  " << r.guide << "  " << r.metric << "  "
              << cflow::metrics::format_double(r.report.mean) << " +- "
              << cflow::metrics::format_double(r.report.sem) << "  (n=" << r.report.values.size()
              << ")\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cascading flows benchmark harness"};
  app.require_subcommand(1);

  std::string config_path, out_dir, scale = "desk", run_dir;
  std::uint64_t seed = 0;
  int table = 0, workers = 0;
  bool svg = false;

  auto* run = app.add_subcommand("run", "run one experiment from a JSON config");
  run->add_option("--config", config_path, "ExperimentConfig JSON")->required()->check(CLI::ExistingFile);
  auto* seed_opt = run->add_option("--seed", seed, "master seed");
  auto* scale_opt = run->add_option("--scale", scale, "preset scale")->check(CLI::IsMember({"desk", "paper"}));
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--workers", workers, "worker threads (0: all cores)");

  auto* repro = app.add_subcommand("reproduce", "run every experiment of a table");
  repro->add_option("--table", table, "table number")->required()->check(CLI::IsMember({1, 2, 3}));
  repro->add_option("--scale", scale, "preset scale")->check(CLI::IsMember({"desk", "paper"}));
  repro->add_option("--out", out_dir, "output directory");
  auto* repro_seed = repro->add_option("--seed", seed, "master seed");
  repro->add_option("--workers", workers, "worker threads (0: all cores)");

  auto* exp = app.add_subcommand("export", "write artifacts of a completed run");
  exp->add_option("--run", run_dir, "run directory")->required()->check(CLI::ExistingDirectory);
  exp->add_flag("--svg", svg, "write SVG plots of trajectory dumps");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      nlohmann::json j = read_json(config_path);
      if (*scale_opt) j["scale"] = scale;
      ExperimentConfig cfg = config_from_json(j);
      if (*seed_opt) cfg.master_seed = seed;
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      if (workers > 0) cfg.workers = workers;
      print(run_experiment(cfg));
      std::cout << "wrote " << cfg.output_dir << "\n";
    } else if (*repro) {
      if (out_dir.empty()) out_dir = "runs/table" + std::to_string(table) + "_" + scale;
      std::optional<std::uint64_t> s;
      if (*repro_seed) s = seed;
      print(reproduce_table(table, scale_from_string(scale), out_dir, s, workers));
      std::cout << "wrote " << out_dir << "\n";
    } else if (*exp) {
      if (!svg) {
        std::cout << "artifacts already on disk in " << run_dir << "; pass --svg for plots\n";
        return 0;
      }
      for (const auto& p : export_svg(run_dir)) std::cout << p.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
