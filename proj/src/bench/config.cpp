#include <algorithm>

#include "cflow/bench/experiment.hpp"
#include "cflow/program/serialize.hpp"

namespace cflow::bench {

using nlohmann::json;

std::string to_string(Scale s) { return s == Scale::Desk ? "desk" : "paper"; }

Scale scale_from_string(const std::string& s) {
  if (s == "desk") return Scale::Desk;
  if (s == "paper") return Scale::Paper;
  throw std::invalid_argument("unknown scale '" + s + "' (expected desk or paper)");
}

const std::vector<std::string>& experiment_ids() {
  static const std::vector<std::string> ids = {
      "BR-r",     "BR-c",     "LZ-r",   "LZ-c",   "PD-r",     "PD-c",     "RNN-r",
      "RNN-c",    "Linear-2", "Linear-4", "Tanh-2", "Tanh-4", "AMORT-PD", "AMORT-LZ"};
  return ids;
}

bool is_experiment_id(const std::string& id) {
  const auto& ids = experiment_ids();
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

ExperimentFamily family_of(const std::string& id) {
  if (!is_experiment_id(id)) throw std::invalid_argument("unknown experiment '" + id + "'");
  if (id.rfind("AMORT-", 0) == 0) return ExperimentFamily::Amortized;
  if (id.rfind("Linear-", 0) == 0 || id.rfind("Tanh-", 0) == 0) return ExperimentFamily::Tree;
  return ExperimentFamily::Timeseries;
}

namespace {

SdeModelKind model_of(const std::string& id) {
  if (family_of(id) == ExperimentFamily::Amortized) return sde_model_from_string(id.substr(6));
  return sde_model_from_string(id.substr(0, id.find('-')));
}

}  // namespace

std::vector<guides::GuideKind> default_guides(const std::string& id) {
  using guides::GuideKind;
  switch (family_of(id)) {
    case ExperimentFamily::Timeseries:
      return {GuideKind::CF, GuideKind::ASVI, GuideKind::MF,
              GuideKind::GF, GuideKind::MVN,  GuideKind::CFNonRes};
    case ExperimentFamily::Tree:
      return {GuideKind::CF, GuideKind::ASVI, GuideKind::MF, GuideKind::GF, GuideKind::MVN};
    case ExperimentFamily::Amortized:
      return {GuideKind::CF, GuideKind::MF, GuideKind::GF};
  }
  return {};
}

ExperimentConfig preset(const std::string& id, Scale scale) {
  ExperimentConfig cfg;
  cfg.experiment = id;
  cfg.guide_kinds = default_guides(id);
  cfg.scale = to_string(scale);
  const bool desk = scale == Scale::Desk;
  cfg.train.iterations = desk ? 3000 : 8000;
  const ExperimentFamily fam = family_of(id);
  if (fam == ExperimentFamily::Tree) {
    cfg.repetitions = desk ? 5 : 15;
    cfg.tree_depth = std::stoi(id.substr(id.find('-') + 1));
    return cfg;
  }
  const SdeModelSpec base = sde_preset(model_of(id));
  cfg.horizon = desk ? 20 : base.horizon;
  cfg.diffusion = base.diffusion;
  cfg.dt = base.dt;
  if (desk && base.kind == SdeModelKind::Lorenz) cfg.dt = 0.01;
  if (fam == ExperimentFamily::Amortized) {
    cfg.repetitions = 1;
    cfg.test_datasets = desk ? 20 : 50;
    cfg.guide_options.amortized = true;
  } else {
    cfg.repetitions = desk ? 3 : 10;
  }
  return cfg;
}

void validate(const ExperimentConfig& cfg) {
  if (!is_experiment_id(cfg.experiment)) {
    throw std::invalid_argument("unknown experiment '" + cfg.experiment + "'");
  }
  if (cfg.repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
  if (cfg.guide_kinds.empty()) throw std::invalid_argument("no guides requested");
  if (cfg.latent_samples < 2) throw std::invalid_argument("latent_samples must be >= 2");
  if (cfg.trajectory_samples < 0) throw std::invalid_argument("trajectory_samples must be >= 0");
  if (cfg.workers < 0) throw std::invalid_argument("workers must be >= 0");
  train::validate(cfg.train);
  const ExperimentFamily fam = family_of(cfg.experiment);
  if (fam == ExperimentFamily::Tree) {
    if (cfg.tree_depth < 1) throw std::invalid_argument("tree_depth must be >= 1");
  } else {
    if (cfg.horizon < 2) throw std::invalid_argument("horizon must be >= 2");
    if (!(cfg.dt > 0.0) || !(cfg.diffusion > 0.0)) {
      throw std::invalid_argument("dt and diffusion must be > 0");
    }
  }
  if (fam == ExperimentFamily::Amortized) {
    if (cfg.test_datasets < 1) throw std::invalid_argument("test_datasets must be >= 1");
    if (!cfg.guide_options.amortized) {
      throw std::invalid_argument("amortized experiments need guide_options.amortized");
    }
    for (auto k : cfg.guide_kinds) {
      if (k == guides::GuideKind::MVN || k == guides::GuideKind::ASVI) {
        throw std::invalid_argument(guides::to_string(k) + " cannot be amortized");
      }
    }
  } else if (cfg.guide_options.amortized) {
    throw std::invalid_argument("only AMORT-* experiments are amortized");
  }
}

SdeModelSpec sde_spec(const ExperimentConfig& cfg, Rng& data_rng) {
  const std::string& id = cfg.experiment;
  SdeModelSpec s = sde_preset(model_of(id));
  s.horizon = cfg.horizon;
  s.dt = cfg.dt;
  s.diffusion = cfg.diffusion;
  if (id.size() > 2 && id.substr(id.size() - 2) == "-c") s.emission = EmissionKind::Classification;
  if (s.kind == SdeModelKind::Recurrent) s.rnn = build_rnn_drift(data_rng);
  return s;
}

TreeModelSpec tree_spec(const ExperimentConfig& cfg) {
  const TreeLinkKind link =
      cfg.experiment.rfind("Linear-", 0) == 0 ? TreeLinkKind::Linear : TreeLinkKind::Tanh;
  return tree_preset(link, cfg.tree_depth);
}

namespace {

json resolved_model(const ExperimentConfig& cfg) {
  if (family_of(cfg.experiment) == ExperimentFamily::Tree) {
    const TreeModelSpec t = tree_spec(cfg);
    return {{"depth", t.depth},
            {"link", t.link == TreeLinkKind::Linear ? "linear" : "tanh"},
            {"sd", t.sd},
            {"root_sd", t.root_sd},
            {"observed", "single node of the last layer"}};
  }
  Rng unused(0);
  SdeModelSpec s = sde_spec(cfg, unused);
  return {{"model", to_string(s.kind)},
          {"dim", s.dim},
          {"diffusion", s.diffusion},
          {"dt", s.dt},
          {"horizon", s.horizon},
          {"init_mean", s.init_mean},
          {"init_sd", s.init_sd},
          {"emission", s.emission == EmissionKind::Regression ? "regression" : "classification"},
          {"noise_sd", s.noise_sd},
          {"gain", s.gain},
          {"transition_mean", s.kind == SdeModelKind::Brownian ? "x" : "x + dt * drift(x)"},
          {"observed_range", family_of(cfg.experiment) == ExperimentFamily::Amortized
                                 ? "[0, T)"
                                 : "[0, T/2)"},
          {"rnn_shape", s.kind == SdeModelKind::Recurrent ? "2-5-5-2, weights iid N(0,1) per repetition"
                                                            : ""}};
}

json fixed_choices() {
  return {{"kde_bandwidth", "0.9 * population_sd * N^(-1/5), floor 1e-6"},
          {"gaussian_fit_jitter", metrics::kCovarianceJitter},
          {"upper_diag", "softplus(raw) + 1e-4"},
          {"activations", "softplus in every block but the last, which is linear"},
          {"aux_coupling", "softmax over K children + 1 noise slot, on pre-flow auxiliaries"},
          {"aux_posterior", "per-node diagonal normal on post-flow auxiliaries"},
          {"inference_network", "observations -> 64 tanh -> 64 tanh -> means, raw scales"},
          {"amortized_training", "fresh simulated dataset every iteration"},
          {"optimizer", "Adam, ascent on the ELBO"},
          {"seeds", "splitmix64(master, experiment, repetition, stream)"}};
}

}  // namespace

json to_json(const ExperimentConfig& cfg) {
  json guides_list = json::array();
  for (auto k : cfg.guide_kinds) guides_list.push_back(guides::to_string(k));
  const guides::GuideOptions& o = cfg.guide_options;
  const train::TrainConfig& t = cfg.train;
  json j;
  j["experiment"] = cfg.experiment;
  j["scale"] = cfg.scale;
  j["guides"] = guides_list;
  j["repetitions"] = cfg.repetitions;
  j["master_seed"] = cfg.master_seed;
  j["horizon"] = cfg.horizon;
  j["dt"] = cfg.dt;
  j["diffusion"] = cfg.diffusion;
  j["tree_depth"] = cfg.tree_depth;
  j["latent_samples"] = cfg.latent_samples;
  j["trajectory_samples"] = cfg.trajectory_samples;
  j["test_datasets"] = cfg.test_datasets;
  j["workers"] = cfg.workers;
  j["output_dir"] = cfg.output_dir;
  j["train"] = {{"iterations", t.iterations},
                {"learning_rate", t.learning_rate},
                {"samples", t.samples},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"eps", t.eps},
                {"divergence_patience", t.divergence_patience}};
  j["guide_options"] = {{"aux_dim", o.aux_dim},
                        {"amortized", o.amortized},
                        {"blocks", o.blocks},
                        {"init_scale", o.init_scale},
                        {"gate_init", o.gate_init},
                        {"linear_activations", o.linear_activations},
                        {"gf_aux_dim", o.gf_aux_dim},
                        {"hidden", o.hidden}};
  j["resolved_model"] = resolved_model(cfg);
  j["fixed_choices"] = fixed_choices();
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  const std::string id = j.at("experiment").get<std::string>();
  const Scale scale = scale_from_string(j.value("scale", std::string("desk")));
  ExperimentConfig cfg = preset(id, scale);
  const json known = to_json(cfg);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown config field '" + key + "'");
  }
  if (j.contains("guides")) {
    cfg.guide_kinds.clear();
    for (const auto& g : j.at("guides")) {
      cfg.guide_kinds.push_back(guides::guide_kind_from_string(g.get<std::string>()));
    }
  }
  cfg.repetitions = j.value("repetitions", cfg.repetitions);
  cfg.master_seed = j.value("master_seed", cfg.master_seed);
  cfg.horizon = j.value("horizon", cfg.horizon);
  cfg.dt = j.value("dt", cfg.dt);
  cfg.diffusion = j.value("diffusion", cfg.diffusion);
  cfg.tree_depth = j.value("tree_depth", cfg.tree_depth);
  cfg.latent_samples = j.value("latent_samples", cfg.latent_samples);
  cfg.trajectory_samples = j.value("trajectory_samples", cfg.trajectory_samples);
  cfg.test_datasets = j.value("test_datasets", cfg.test_datasets);
  cfg.workers = j.value("workers", cfg.workers);
  cfg.output_dir = j.value("output_dir", cfg.output_dir);
  if (j.contains("train")) {
    const json& t = j.at("train");
    cfg.train.iterations = t.value("iterations", cfg.train.iterations);
    cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
    cfg.train.samples = t.value("samples", cfg.train.samples);
    cfg.train.beta1 = t.value("beta1", cfg.train.beta1);
    cfg.train.beta2 = t.value("beta2", cfg.train.beta2);
    cfg.train.eps = t.value("eps", cfg.train.eps);
    cfg.train.divergence_patience = t.value("divergence_patience", cfg.train.divergence_patience);
  }
  if (j.contains("guide_options")) {
    const json& o = j.at("guide_options");
    guides::GuideOptions& g = cfg.guide_options;
    g.aux_dim = o.value("aux_dim", g.aux_dim);
    g.amortized = o.value("amortized", g.amortized);
    g.blocks = o.value("blocks", g.blocks);
    g.init_scale = o.value("init_scale", g.init_scale);
    g.gate_init = o.value("gate_init", g.gate_init);
    g.linear_activations = o.value("linear_activations", g.linear_activations);
    g.gf_aux_dim = o.value("gf_aux_dim", g.gf_aux_dim);
    g.hidden = o.value("hidden", g.hidden);
  }
  validate(cfg);
  return cfg;
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  j.erase("output_dir");
  j.erase("workers");
  return fnv1a_hex(j.dump());
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(master);
  for (std::uint64_t p : path) s = splitmix64(s ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

}  // namespace cflow::bench
