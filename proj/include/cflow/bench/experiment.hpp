#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cflow/guides/guide.hpp"
#include "cflow/metrics/metrics.hpp"
#include "cflow/program/models.hpp"
#include "cflow/train/trainer.hpp"

namespace cflow::bench {

enum class Scale { Desk, Paper };
std::string to_string(Scale s);
Scale scale_from_string(const std::string& s);

enum class ExperimentFamily { Timeseries, Tree, Amortized };

const std::vector<std::string>& experiment_ids();
bool is_experiment_id(const std::string& id);
ExperimentFamily family_of(const std::string& id);

struct ExperimentConfig {
  std::string experiment;
  std::vector<guides::GuideKind> guide_kinds;
  int repetitions = 3;
  train::TrainConfig train;
  guides::GuideOptions guide_options;
  std::string scale = "desk";
  std::uint64_t master_seed = 0;

  // Model constants. Zero or negative means "use the preset value".
  int horizon = 0;
  double dt = 0.0;
  double diffusion = 0.0;
  int tree_depth = 0;

  int latent_samples = 5000;      // guide samples behind every KDE / Gaussian fit
  int trajectory_samples = 100;   // sample paths dumped per repetition
  int test_datasets = 50;         // amortized experiments only

  int workers = 0;                // 0: hardware concurrency
  std::string output_dir = "runs/out";
};

/// Every field resolved for `id` at `scale`.
ExperimentConfig preset(const std::string& id, Scale scale);
/// Guides compared for an experiment in its results table.
std::vector<guides::GuideKind> default_guides(const std::string& id);

void validate(const ExperimentConfig& cfg);

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Missing fields take the preset value for the config's experiment and scale.
ExperimentConfig config_from_json(const nlohmann::json& j);

/// FNV-1a of the resolved config, ignoring fields that cannot change results
/// (output directory, worker count).
std::string config_hash(const ExperimentConfig& cfg);

/// SDE model for a timeseries or amortized id after config overrides.
SdeModelSpec sde_spec(const ExperimentConfig& cfg, Rng& data_rng);
TreeModelSpec tree_spec(const ExperimentConfig& cfg);

struct ResultRow {
  std::string experiment, guide, metric;
  metrics::MetricReport report;
  std::string config_hash;
};

struct RepetitionRecord {
  std::string experiment, guide, metric;
  int repetition = 0;
  double value = 0.0;
  bool diverged = false;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::vector<RepetitionRecord> repetitions;

  std::string results_csv() const;
  std::string repetitions_csv() const;
  const ResultRow* find(const std::string& experiment, const std::string& guide,
                        const std::string& metric) const;
  /// Non-diverged per-repetition values.
  std::vector<double> values(const std::string& experiment, const std::string& guide,
                             const std::string& metric) const;
};

/// Runs every repetition and guide, writing config.json first, then
/// results.csv, repetitions.csv, checkpoints/, traces/ and trajectories/
/// under cfg.output_dir. Pass an empty output_dir to skip file output.
ResultTable run_experiment(const ExperimentConfig& cfg);

/// Runs all experiments of results table 1, 2 or 3 into out_dir/<experiment>/ and writes
/// a combined out_dir/results.csv.
ResultTable reproduce_table(int table, Scale scale, const std::filesystem::path& out_dir,
                            std::optional<std::uint64_t> seed = std::nullopt, int workers = 0);

/// Writes SVG line plots for every trajectory dump of a completed run.
std::vector<std::filesystem::path> export_svg(const std::filesystem::path& run_dir);

/// splitmix64 step, used to derive independent seeds.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

}  // namespace cflow::bench
