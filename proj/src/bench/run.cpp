#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "cflow/bench/experiment.hpp"
#include "cflow/program/serialize.hpp"

namespace cflow::bench {

namespace fs = std::filesystem;
using guides::GuideKind;

namespace {

constexpr const char* kExactGuide = "Exact";

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw std::runtime_error("cannot create directory " + path.parent_path().string());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::uint64_t id_hash(const std::string& id) { return std::stoull(fnv1a_hex(id), nullptr, 16); }

std::string csv_value(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct JobResult {
  std::vector<RepetitionRecord> records;
};

// One unit of work: a guide (or the exact oracle) at one repetition.
struct Job {
  std::string guide;  // guide name or kExactGuide
  GuideKind kind = GuideKind::MF;
  int repetition = 0;
};

class Runner {
 public:
  explicit Runner(const ExperimentConfig& cfg)
      : cfg_(cfg), fam_(family_of(cfg.experiment)), exp_(id_hash(cfg.experiment)),
        out_(cfg.output_dir) {}

  std::vector<Job> jobs() const {
    std::vector<Job> out;
    for (int r = 0; r < cfg_.repetitions; ++r) {
      for (GuideKind k : cfg_.guide_kinds) out.push_back({guides::to_string(k), k, r});
      if (has_exact()) out.push_back({kExactGuide, GuideKind::MF, r});
    }
    return out;
  }

  JobResult run(const Job& job) const {
    switch (fam_) {
      case ExperimentFamily::Timeseries: return timeseries(job);
      case ExperimentFamily::Tree: return tree(job);
      case ExperimentFamily::Amortized: return amortized(job);
    }
    return {};
  }

 private:
  bool has_exact() const {
    return cfg_.experiment == "BR-r" || cfg_.experiment.rfind("Linear-", 0) == 0;
  }
  bool writes() const { return !cfg_.output_dir.empty(); }

  std::uint64_t seed(std::initializer_list<std::uint64_t> path) const {
    std::vector<std::uint64_t> p{exp_};
    p.insert(p.end(), path.begin(), path.end());
    std::uint64_t s = derive_seed(cfg_.master_seed, {});
    for (std::uint64_t x : p) s = derive_seed(s, {x});
    return s;
  }
  std::uint64_t kind_code(const Job& job) const {
    return job.guide == kExactGuide ? 99 : static_cast<std::uint64_t>(job.kind);
  }

  std::string stem(const Job& job) const {
    return cfg_.experiment + "_" + job.guide + "_rep" + std::to_string(job.repetition);
  }

  RepetitionRecord record(const Job& job, const std::string& metric, double v,
                          int rep = -1) const {
    RepetitionRecord r{cfg_.experiment, job.guide, metric, rep < 0 ? job.repetition : rep, v,
                       !std::isfinite(v)};
    return r;
  }

  void diverge(JobResult& res, const Job& job, const std::vector<std::string>& metrics,
               int rep = -1) const {
    for (const std::string& m : metrics) {
      RepetitionRecord r = record(job, m, std::numeric_limits<double>::quiet_NaN(), rep);
      r.diverged = true;
      res.records.push_back(r);
    }
  }

  guides::Guide make_guide(const ProgramGraph& g, const Job& job, std::uint64_t rep) const {
    Rng init(seed({rep, 1, kind_code(job)}));
    return guides::Guide(g, job.kind, cfg_.guide_options, init);
  }

  train::TrainConfig train_config(const Job& job, std::uint64_t rep) const {
    train::TrainConfig t = cfg_.train;
    t.seed = seed({rep, 2, kind_code(job)});
    return t;
  }

  // Trains, writing the checkpoint and trace. Returns false on divergence.
  template <class Fn>
  bool fit(guides::Guide& guide, const Job& job, Fn&& do_train) const {
    train::TrainTrace trace;
    bool ok = true;
    try {
      trace = do_train();
    } catch (const train::DivergenceError& e) {
      trace = e.trace();
      ok = false;
    }
    if (writes()) {
      write_file(out_ / "traces" / (stem(job) + ".csv"), trace.to_csv());
      if (ok) {
        write_file(out_ / "checkpoints" / (stem(job) + ".json"),
                   guides::checkpoint_to_json(guide).dump());
      }
    }
    return ok;
  }

  static bool finite(const Assignment& a) {
    for (const auto& [n, v] : a) {
      if (!v.allFinite()) return false;
    }
    return true;
  }

  // ---- timeseries -------------------------------------------------------

  JobResult timeseries(const Job& job) const {
    JobResult res;
    const std::uint64_t rep = job.repetition;
    Rng data(seed({rep, 0}));
    const SdeModelSpec spec = sde_spec(cfg_, data);
    const bool classify = spec.emission == EmissionKind::Classification;
    std::vector<std::string> metric_names = {"Pred", "Latent"};
    if (classify) metric_names.insert(metric_names.begin() + 1, "PredMixture");
    const ProgramGraph chain = build_sde_model(spec);
    const int T = spec.horizon, half = T / 2;
    const ProgramGraph full = attach_emissions(chain, spec, 0, T);
    const Assignment truth = ancestral_sample(full, data);
    if (!finite(truth)) {
      diverge(res, job, metric_names);
      return res;
    }
    const ProgramGraph observed = attach_emissions(chain, spec, 0, half);
    Assignment obs, future;
    for (int t = 0; t < T; ++t) {
      (t < half ? obs : future)[emission_name(t)] = truth.at(emission_name(t));
    }
    std::vector<std::string> names;
    for (int t = 0; t < T; ++t) names.push_back(latent_name(t));

    Rng eval(seed({rep, 3, kind_code(job)}));
    std::map<std::string, Eigen::MatrixXd> samples;
    if (job.guide == kExactGuide) {
      samples = exact_samples(observed, obs, eval);
    } else {
      guides::Guide guide = make_guide(observed, job, rep);
      const train::TrainConfig tc = train_config(job, rep);
      if (!fit(guide, job, [&] { return train::train(guide, obs, tc); })) {
        diverge(res, job, metric_names);
        return res;
      }
      samples = guides::sample_latents(guide, eval, cfg_.latent_samples, obs);
    }
    if (!samples_finite(samples)) {
      diverge(res, job, metric_names);
      return res;
    }
    const double pred =
        metrics::predictive_ll(full, samples, future, eval, metrics::PredictiveMode::Kde);
    const double latent = metrics::latent_marginal_ll(samples, truth, names);
    res.records.push_back(record(job, "Pred", pred));
    if (classify) {
      res.records.push_back(record(job, "PredMixture",
                                   metrics::predictive_ll(full, samples, future, eval,
                                                          metrics::PredictiveMode::Mixture)));
    }
    res.records.push_back(record(job, "Latent", latent));
    if (writes()) dump_trajectories(job, spec, truth, half, samples);
    return res;
  }

  static bool samples_finite(const std::map<std::string, Eigen::MatrixXd>& s) {
    for (const auto& [n, m] : s) {
      if (!m.allFinite()) return false;
    }
    return true;
  }

  std::map<std::string, Eigen::MatrixXd> exact_samples(const ProgramGraph& g,
                                                       const Assignment& obs, Rng& rng) const {
    const metrics::GaussianPosterior post = metrics::exact_linear_gaussian_posterior(g, obs);
    const Eigen::MatrixXd l = post.cov.llt().matrixL();
    std::normal_distribution<double> normal(0.0, 1.0);
    const int n = cfg_.latent_samples;
    Eigen::MatrixXd draws(n, post.mean.size());
    for (int s = 0; s < n; ++s) {
      Eigen::VectorXd xi(post.mean.size());
      for (Eigen::Index i = 0; i < xi.size(); ++i) xi(i) = normal(rng);
      draws.row(s) = (post.mean + l * xi).transpose();
    }
    std::map<std::string, Eigen::MatrixXd> out;
    for (std::size_t i = 0; i < post.nodes.size(); ++i) {
      const Node& node = g.node(post.nodes[i]);
      out[node.name] = draws.middleCols(post.offsets[i], node.dim);
    }
    return out;
  }

  void dump_trajectories(const Job& job, const SdeModelSpec& spec, const Assignment& truth,
                         int half, const std::map<std::string, Eigen::MatrixXd>& samples) const {
    std::string csv = "time,dim,truth,obs,sample_id,value\n";
    const int n = std::min<int>(cfg_.trajectory_samples, cfg_.latent_samples);
    for (int t = 0; t < spec.horizon; ++t) {
      const Eigen::VectorXd& x = truth.at(latent_name(t));
      const Eigen::MatrixXd& s = samples.at(latent_name(t));
      const std::string obs =
          t < half ? csv_value(truth.at(emission_name(t))(0)) : std::string();
      for (int j = 0; j < spec.dim; ++j) {
        const std::string prefix = std::to_string(t) + "," + std::to_string(j) + "," +
                                   csv_value(x(j)) + "," + (j == 0 ? obs : "") + ",";
        for (int k = 0; k < n; ++k) {
          csv += prefix + std::to_string(k) + "," + csv_value(s(k, j)) + "\n";
        }
      }
    }
    write_file(out_ / "trajectories" / (stem(job) + ".csv"), csv);
  }

  // ---- binary trees -----------------------------------------------------

  JobResult tree(const Job& job) const {
    const bool linear = cfg_.experiment.rfind("Linear-", 0) == 0;
    std::vector<std::string> metric_names = {"MultiLatent"};
    if (linear) metric_names.push_back("MultiLatentExpected");
    JobResult res;
    const std::uint64_t rep = job.repetition;
    Rng data(seed({rep, 0}));
    const TreeModelSpec spec = tree_spec(cfg_);
    const ProgramGraph g = build_binary_tree(spec);
    const Assignment sample = ancestral_sample(g, data);
    Assignment obs;
    std::vector<std::string> names;
    for (int j : g.observed_indices()) obs[g.node(j).name] = sample.at(g.node(j).name);
    for (int j : g.latent_indices()) names.push_back(g.node(j).name);
    Eigen::VectorXd truth(static_cast<Eigen::Index>(names.size()));
    for (std::size_t i = 0; i < names.size(); ++i) truth(i) = sample.at(names[i])(0);

    Rng eval(seed({rep, 3, kind_code(job)}));
    std::optional<metrics::GaussianPosterior> post;
    if (linear) post = metrics::exact_linear_gaussian_posterior(g, obs);
    std::map<std::string, Eigen::MatrixXd> samples;
    if (job.guide == kExactGuide) {
      samples = exact_samples(g, obs, eval);
    } else {
      guides::Guide guide = make_guide(g, job, rep);
      const train::TrainConfig tc = train_config(job, rep);
      if (!fit(guide, job, [&] { return train::train(guide, obs, tc); })) {
        diverge(res, job, metric_names);
        return res;
      }
      samples = guides::sample_latents(guide, eval, cfg_.latent_samples, obs);
    }
    if (!samples_finite(samples)) {
      diverge(res, job, metric_names);
      return res;
    }
    const Eigen::MatrixXd stacked = metrics::stack_samples(samples, names);
    res.records.push_back(record(job, "MultiLatent", safe([&] {
      return metrics::gaussian_fit_ll(stacked, truth);
    })));
    if (linear) {
      const double v = job.guide == kExactGuide
                           ? metrics::negative_entropy(post->cov)
                           : safe([&] {
                               return metrics::expected_gaussian_fit_ll(stacked, post->mean,
                                                                        post->cov);
                             });
      res.records.push_back(record(job, "MultiLatentExpected", v));
    }
    return res;
  }

  template <class Fn>
  static double safe(Fn&& fn) {
    try {
      return fn();
    } catch (const std::runtime_error&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  }

  // ---- amortized --------------------------------------------------------

  JobResult amortized(const Job& job) const {
    JobResult res;
    Rng model_rng(seed({0, 0}));
    const SdeModelSpec spec = sde_spec(cfg_, model_rng);
    const ProgramGraph chain = build_sde_model(spec);
    const int T = spec.horizon;
    const ProgramGraph full = attach_emissions(chain, spec, 0, T);
    std::vector<std::string> names, ys;
    for (int t = 0; t < T; ++t) {
      names.push_back(latent_name(t));
      ys.push_back(emission_name(t));
    }
    auto observe = [&](const Assignment& a) {
      Assignment o;
      for (const std::string& y : ys) o[y] = a.at(y);
      return o;
    };
    const std::uint64_t rep = job.repetition;
    guides::Guide guide = make_guide(full, job, rep);
    const train::TrainConfig tc = train_config(job, rep);
    const train::ObservationSource source = [&](Rng& rng) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        const Assignment a = ancestral_sample(full, rng);
        if (finite(a)) return observe(a);
      }
      throw std::runtime_error("amortized training: simulator keeps overflowing");
    };
    const bool ok = fit(guide, job, [&] { return train::train_amortized(guide, source, tc); });
    for (int d = 0; d < cfg_.test_datasets; ++d) {
      const int slot = job.repetition * cfg_.test_datasets + d;
      if (!ok) {
        diverge(res, job, {"Latent"}, slot);
        continue;
      }
      Rng data(seed({1000 + static_cast<std::uint64_t>(d), 0}));
      const Assignment truth = ancestral_sample(full, data);
      if (!finite(truth)) {
        diverge(res, job, {"Latent"}, slot);
        continue;
      }
      const Assignment obs = observe(truth);
      Rng eval(seed({rep, 3, kind_code(job), static_cast<std::uint64_t>(d)}));
      const auto samples = guides::sample_latents(guide, eval, cfg_.latent_samples, obs);
      const double v = samples_finite(samples)
                           ? metrics::latent_marginal_ll(samples, truth, names)
                           : std::numeric_limits<double>::quiet_NaN();
      res.records.push_back(record(job, "Latent", v, slot));
      if (writes() && d == 0) {
        Job dumped = job;
        dump_trajectories(dumped, spec, truth, T, samples);
      }
    }
    return res;
  }

  const ExperimentConfig& cfg_;
  ExperimentFamily fam_;
  std::uint64_t exp_;
  fs::path out_;
};

// Fixed worker pool; job i always lands in slot i.
template <class T, class Fn>
std::vector<T> run_pool(std::size_t n, int workers, Fn&& fn) {
  std::vector<T> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int w = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (w == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < w; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace

std::string ResultTable::results_csv() const {
  std::string out = "experiment,guide,metric,mean,sem,reps,config_hash\n";
  for (const ResultRow& r : rows) out += r.report.csv_row(r.experiment, r.guide, r.config_hash) + "\n";
  return out;
}

std::string ResultTable::repetitions_csv() const {
  std::string out = "experiment,guide,metric,repetition,value,diverged\n";
  for (const RepetitionRecord& r : repetitions) {
    out += r.experiment + "," + r.guide + "," + r.metric + "," + std::to_string(r.repetition) +
           "," + csv_value(r.value) + "," + (r.diverged ? "1" : "0") + "\n";
  }
  return out;
}

const ResultRow* ResultTable::find(const std::string& experiment, const std::string& guide,
                                   const std::string& metric) const {
  for (const ResultRow& r : rows) {
    if (r.experiment == experiment && r.guide == guide && r.metric == metric) return &r;
  }
  return nullptr;
}

std::vector<double> ResultTable::values(const std::string& experiment, const std::string& guide,
                                        const std::string& metric) const {
  std::vector<double> out;
  for (const RepetitionRecord& r : repetitions) {
    if (r.experiment == experiment && r.guide == guide && r.metric == metric && !r.diverged) {
      out.push_back(r.value);
    }
  }
  return out;
}

ResultTable run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  const fs::path out(cfg.output_dir);
  const bool writes = !cfg.output_dir.empty();
  const std::string hash = config_hash(cfg);
  if (writes) write_file(out / "config.json", to_json(cfg).dump(2) + "\n");

  Runner runner(cfg);
  const std::vector<Job> jobs = runner.jobs();
  const int workers = cfg.workers > 0 ? cfg.workers
                                      : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const std::vector<JobResult> results =
      run_pool<JobResult>(jobs.size(), workers, [&](std::size_t i) { return runner.run(jobs[i]); });

  ResultTable table;
  std::vector<std::string> guide_order;
  for (GuideKind k : cfg.guide_kinds) guide_order.push_back(guides::to_string(k));
  guide_order.push_back(kExactGuide);
  std::vector<std::string> metric_order;
  for (const JobResult& r : results) {
    for (const RepetitionRecord& rec : r.records) {
      table.repetitions.push_back(rec);
      if (std::find(metric_order.begin(), metric_order.end(), rec.metric) == metric_order.end()) {
        metric_order.push_back(rec.metric);
      }
    }
  }
  std::stable_sort(table.repetitions.begin(), table.repetitions.end(),
                   [&](const RepetitionRecord& a, const RepetitionRecord& b) {
                     auto gi = [&](const std::string& g) {
                       return std::find(guide_order.begin(), guide_order.end(), g) - guide_order.begin();
                     };
                     if (gi(a.guide) != gi(b.guide)) return gi(a.guide) < gi(b.guide);
                     return a.repetition < b.repetition;
                   });
  for (const std::string& g : guide_order) {
    for (const std::string& m : metric_order) {
      bool present = false;
      for (const RepetitionRecord& rec : table.repetitions) {
        present |= rec.guide == g && rec.metric == m;
      }
      if (!present) continue;
      table.rows.push_back({cfg.experiment, g, m,
                            metrics::MetricReport::from_values(m, table.values(cfg.experiment, g, m)),
                            hash});
    }
  }
  if (writes) {
    write_file(out / "results.csv", table.results_csv());
    write_file(out / "repetitions.csv", table.repetitions_csv());
  }
  return table;
}

ResultTable reproduce_table(int table, Scale scale, const fs::path& out_dir,
                            std::optional<std::uint64_t> seed, int workers) {
  std::vector<std::string> ids;
  switch (table) {
    case 1: ids = {"BR-r", "BR-c", "LZ-r", "LZ-c", "PD-r", "PD-c", "RNN-r", "RNN-c"}; break;
    case 2: ids = {"Linear-2", "Linear-4", "Tanh-2", "Tanh-4"}; break;
    case 3: ids = {"AMORT-PD", "AMORT-LZ"}; break;
    default: throw std::invalid_argument("table must be 1, 2 or 3");
  }
  ResultTable all;
  for (const std::string& id : ids) {
    ExperimentConfig cfg = preset(id, scale);
    if (seed) cfg.master_seed = *seed;
    cfg.workers = workers;
    cfg.output_dir = out_dir.empty() ? std::string() : (out_dir / id).string();
    ResultTable t = run_experiment(cfg);
    all.rows.insert(all.rows.end(), t.rows.begin(), t.rows.end());
    all.repetitions.insert(all.repetitions.end(), t.repetitions.begin(), t.repetitions.end());
  }
  if (!out_dir.empty()) {
    write_file(out_dir / "results.csv", all.results_csv());
    write_file(out_dir / "repetitions.csv", all.repetitions_csv());
  }
  return all;
}

}  // namespace cflow::bench
