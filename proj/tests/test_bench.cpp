#include <doctest.h>

#include <fstream>
#include <sstream>

#include "cflow/bench/experiment.hpp"

using namespace cflow;
using namespace cflow::bench;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cflow_bench_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig small_br(const fs::path& out) {
  ExperimentConfig cfg = preset("BR-r", Scale::Desk);
  cfg.guide_kinds = {guides::GuideKind::MF};
  cfg.repetitions = 2;
  cfg.horizon = 10;
  cfg.train.iterations = 500;
  cfg.latent_samples = 1000;
  cfg.output_dir = out.string();
  return cfg;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string l;
  while (std::getline(ss, l)) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("seeds") {
  CHECK(splitmix64(0) == 0xe220a8397b1dcdafULL);
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
}

TEST_CASE("presets") {
  CHECK(experiment_ids().size() == 14);
  CHECK_THROWS(preset("XX-r", Scale::Desk));
  const ExperimentConfig br = preset("BR-r", Scale::Desk);
  CHECK(br.horizon == 20);
  CHECK(br.train.iterations == 3000);
  CHECK(br.repetitions == 3);
  CHECK(br.guide_kinds.size() == 6);
  const ExperimentConfig tree = preset("Linear-4", Scale::Desk);
  CHECK(tree.tree_depth == 4);
  CHECK(tree.repetitions == 5);
  CHECK(tree.train.iterations == 3000);
  CHECK(tree.guide_kinds.size() == 5);
  const ExperimentConfig am = preset("AMORT-PD", Scale::Desk);
  CHECK(am.test_datasets == 20);
  CHECK(am.guide_options.amortized);
  CHECK(preset("AMORT-PD", Scale::Paper).test_datasets == 50);
  const ExperimentConfig paper = preset("BR-r", Scale::Paper);
  CHECK(paper.train.iterations == 8000);
  CHECK(paper.repetitions == 10);
  CHECK(paper.horizon == 40);

  ExperimentConfig bad = br;
  bad.repetitions = 0;
  CHECK_THROWS(validate(bad));
  bad = am;
  bad.guide_options.amortized = false;
  CHECK_THROWS(validate(bad));
}

TEST_CASE("config json round trip and hash") {
  ExperimentConfig cfg = preset("LZ-c", Scale::Desk);
  cfg.master_seed = 42;
  cfg.train.learning_rate = 0.003;
  const nlohmann::json j = to_json(cfg);
  const ExperimentConfig back = config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(config_hash(back) == config_hash(cfg));

  ExperimentConfig moved = cfg;
  moved.output_dir = "elsewhere";
  moved.workers = 7;
  CHECK(config_hash(moved) == config_hash(cfg));
  moved.train.iterations += 1;
  CHECK(config_hash(moved) != config_hash(cfg));

  nlohmann::json typo = j;
  typo["repetitons"] = 3;
  CHECK_THROWS(config_from_json(typo));
  CHECK(config_from_json({{"experiment", "BR-r"}}).horizon == 20);
}

TEST_CASE("run writes artifacts and aggregates repetitions") {
  const fs::path out = scratch("br");
  const ResultTable t = run_experiment(small_br(out));
  const ResultRow* pred = t.find("BR-r", "MF", "Pred");
  const ResultRow* latent = t.find("BR-r", "MF", "Latent");
  REQUIRE(pred);
  REQUIRE(latent);
  int mf_rows = 0;
  for (const auto& r : t.rows) mf_rows += r.guide == "MF";
  CHECK(mf_rows == 2);
  CHECK(latent->report.values.size() == 2);
  const auto v = t.values("BR-r", "MF", "Latent");
  const double m = (v[0] + v[1]) / 2;
  const double sd = std::sqrt(((v[0] - m) * (v[0] - m) + (v[1] - m) * (v[1] - m)) / 1);
  CHECK(latent->report.sem == doctest::Approx(sd / std::sqrt(2.0)).epsilon(1e-12));

  for (const char* f : {"config.json", "results.csv", "repetitions.csv"}) CHECK(fs::exists(out / f));
  CHECK(fs::exists(out / "checkpoints" / "BR-r_MF_rep1.json"));
  CHECK(fs::exists(out / "traces" / "BR-r_MF_rep0.csv"));
  const auto results = lines(slurp(out / "results.csv"));
  CHECK(results[0] == "experiment,guide,metric,mean,sem,reps,config_hash");
  const auto traj = lines(slurp(out / "trajectories" / "BR-r_MF_rep0.csv"));
  CHECK(traj[0] == "time,dim,truth,obs,sample_id,value");
  CHECK(traj.size() == 1 + 10 * 100);
  CHECK(traj[1].find(",,") == std::string::npos);     // first half carries observations
  CHECK(traj.back().find(",,") != std::string::npos);  // second half does not

  const nlohmann::json cfg = nlohmann::json::parse(slurp(out / "config.json"));
  CHECK(cfg.contains("fixed_choices"));
  CHECK(cfg.at("resolved_model").at("horizon") == 10);
  CHECK(results[1].substr(results[1].rfind(',') + 1) == config_hash(config_from_json(cfg)));

  const auto plots = export_svg(out);
  CHECK(plots.size() == 4);  // MF and Exact, two repetitions each
  CHECK(slurp(plots[0]).rfind("<svg", 0) == 0);
  fs::remove_all(out);
}

TEST_CASE("results are byte identical across repeats and worker counts") {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  ExperimentConfig ca = small_br(a);
  ca.guide_kinds = {guides::GuideKind::MF, guides::GuideKind::CF};
  ca.train.iterations = 100;
  ca.workers = 1;
  ExperimentConfig cb = ca;
  cb.output_dir = b.string();
  cb.workers = 3;
  run_experiment(ca);
  run_experiment(cb);
  CHECK(slurp(a / "results.csv") == slurp(b / "results.csv"));
  CHECK(slurp(a / "repetitions.csv") == slurp(b / "repetitions.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("config is written before anything can fail") {
  const fs::path out = scratch("first");
  fs::create_directories(out / "results.csv");  // a directory where the file should go
  CHECK_THROWS(run_experiment(small_br(out)));
  CHECK(fs::exists(out / "config.json"));
  fs::remove_all(out);
}

TEST_CASE("tree and amortized runs") {
  ExperimentConfig tree = preset("Linear-2", Scale::Desk);
  tree.guide_kinds = {guides::GuideKind::MF};
  tree.repetitions = 2;
  tree.train.iterations = 200;
  tree.latent_samples = 500;
  tree.output_dir = "";
  const ResultTable t = run_experiment(tree);
  CHECK(t.find("Linear-2", "MF", "MultiLatent"));
  CHECK(t.find("Linear-2", "MF", "MultiLatentExpected"));
  const ResultRow* exact = t.find("Linear-2", "Exact", "MultiLatentExpected");
  REQUIRE(exact);
  CHECK(exact->report.mean > t.find("Linear-2", "MF", "MultiLatentExpected")->report.mean);

  ExperimentConfig am = preset("AMORT-PD", Scale::Desk);
  am.guide_kinds = {guides::GuideKind::MF};
  am.train.iterations = 50;
  am.test_datasets = 3;
  am.latent_samples = 200;
  am.output_dir = "";
  const ResultTable a = run_experiment(am);
  REQUIRE(a.find("AMORT-PD", "MF", "Latent"));
  CHECK(a.find("AMORT-PD", "MF", "Latent")->report.values.size() == 3);
}

TEST_CASE("export on missing run directory fails with the path") {
  try {
    export_svg("/nonexistent/run");
    FAIL("expected failure");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("/nonexistent/run") != std::string::npos);
  }
}
