#include "cflow/program/models.hpp"

#include <cmath>

#include "cflow/diff/eval.hpp"

namespace cflow {

std::string to_string(SdeModelKind kind) {
  switch (kind) {
    case SdeModelKind::Brownian: return "BR";
    case SdeModelKind::Lorenz: return "LZ";
    case SdeModelKind::PopulationDynamics: return "PD";
    case SdeModelKind::Recurrent: return "RNN";
  }
  return "?";
}

SdeModelKind sde_model_from_string(const std::string& name) {
  if (name == "BR") return SdeModelKind::Brownian;
  if (name == "LZ") return SdeModelKind::Lorenz;
  if (name == "PD") return SdeModelKind::PopulationDynamics;
  if (name == "RNN") return SdeModelKind::Recurrent;
  throw std::invalid_argument("unknown SDE model '" + name + "'");
}

SdeModelSpec sde_preset(SdeModelKind kind) {
  SdeModelSpec s;
  s.kind = kind;
  s.gain = 2.0;
  switch (kind) {
    case SdeModelKind::Brownian:
      s.dim = 1; s.diffusion = 1.0; s.dt = 1.0; s.horizon = 40;
      s.init_mean = 0.0; s.init_sd = 1.0; s.noise_sd = 1.0;
      break;
    case SdeModelKind::Lorenz:
      s.dim = 3; s.diffusion = 4.0; s.dt = 1.0; s.horizon = 40;
      s.init_mean = 3.0; s.init_sd = 20.0; s.noise_sd = 3.0;
      break;
    case SdeModelKind::PopulationDynamics:
      s.dim = 2; s.diffusion = 2.0; s.dt = 0.02; s.horizon = 100;
      s.init_mean = 0.0; s.init_sd = 1.0; s.noise_sd = 3.0;
      break;
    case SdeModelKind::Recurrent:
      s.dim = 2; s.diffusion = 0.01; s.dt = 0.02; s.horizon = 40;
      s.init_mean = 0.0; s.init_sd = 1.0; s.noise_sd = 1.0;
      break;
  }
  return s;
}

void validate(const SdeModelSpec& spec) {
  if (!(spec.dt > 0.0)) throw std::invalid_argument("SdeModelSpec: dt must be > 0");
  if (spec.horizon < 2) throw std::invalid_argument("SdeModelSpec: T must be >= 2");
  if (!(spec.diffusion > 0.0)) {
    throw std::invalid_argument("SdeModelSpec: diffusion must be > 0");
  }
  if (!(spec.init_sd > 0.0) || !(spec.noise_sd > 0.0) || !(spec.gain > 0.0)) {
    throw std::invalid_argument("SdeModelSpec: scales must be > 0");
  }
  const int expected = spec.kind == SdeModelKind::Brownian ? -1
                       : spec.kind == SdeModelKind::Lorenz ? 3
                                                           : 2;
  if (expected > 0 && spec.dim != expected) {
    throw std::invalid_argument("SdeModelSpec: wrong dimension for " +
                                to_string(spec.kind));
  }
  if (spec.kind == SdeModelKind::Recurrent &&
      (spec.rnn.w1.cols() != spec.dim || spec.rnn.w3.rows() != spec.dim)) {
    throw std::invalid_argument("SdeModelSpec: RNN weights missing or misshapen");
  }
}

std::string latent_name(int t) { return "x" + std::to_string(t); }
std::string emission_name(int t) { return "y" + std::to_string(t); }

namespace {

Link transition_link(const SdeModelSpec& spec) {
  const Eigen::VectorXd scale =
      Eigen::VectorXd::Constant(spec.dim, std::sqrt(spec.diffusion * spec.dt));
  if (spec.kind == SdeModelKind::Brownian) {
    // Random walk: mean x_t.
    return AffineLink{Eigen::MatrixXd::Identity(spec.dim, spec.dim),
                      Eigen::VectorXd::Zero(spec.dim), scale};
  }
  DriftLink d;
  d.kind = spec.kind == SdeModelKind::Lorenz ? DriftKind::Lorenz
           : spec.kind == SdeModelKind::PopulationDynamics
               ? DriftKind::PopulationDynamics
               : DriftKind::Recurrent;
  d.dt = spec.dt;
  d.scale = scale;
  d.rnn = spec.rnn;
  return d;
}

}  // namespace

ProgramGraph build_sde_model(const SdeModelSpec& spec) {
  validate(spec);
  ProgramGraph g;
  g.add_node({latent_name(0), spec.dim, Family::Gaussian,
              ConstantLink{Eigen::VectorXd::Constant(spec.dim, spec.init_mean),
                           Eigen::VectorXd::Constant(spec.dim, spec.init_sd)},
              {}, false});
  const Link step = transition_link(spec);
  for (int t = 1; t < spec.horizon; ++t) {
    g.add_node({latent_name(t), spec.dim, Family::Gaussian, step,
                {latent_name(t - 1)}, false});
  }
  return g;
}

Eigen::VectorXd sde_drift(const SdeModelSpec& spec, const Eigen::VectorXd& x) {
  const Link step = transition_link(spec);
  if (const auto* d = std::get_if<DriftLink>(&step)) {
    diff::Eval ops;
    return evaluate_drift(ops, *d, diff::Array(x));
  }
  return x;
}

Link emission_link(const SdeModelSpec& spec) {
  Eigen::MatrixXd first = Eigen::MatrixXd::Zero(1, spec.dim);
  first(0, 0) = 1.0;
  if (spec.emission == EmissionKind::Regression) {
    return AffineLink{first, Eigen::VectorXd::Zero(1),
                      Eigen::VectorXd::Constant(1, spec.noise_sd)};
  }
  return AffineLink{spec.gain * first, Eigen::VectorXd::Zero(1), Eigen::VectorXd()};
}

Family emission_family(const SdeModelSpec& spec) {
  return spec.emission == EmissionKind::Regression ? Family::Gaussian
                                                   : Family::BernoulliLogit;
}

ProgramGraph attach_emissions(const ProgramGraph& g, const SdeModelSpec& spec,
                              int first, int last) {
  if (first < 0 || last > spec.horizon || first > last) {
    throw std::invalid_argument("attach_emissions: range outside [0, T)");
  }
  for (int t = 0; t < spec.horizon; ++t) {
    if (!g.contains(latent_name(t))) {
      throw std::invalid_argument("attach_emissions: graph is not an SDE chain");
    }
  }
  ProgramGraph out = g;
  const Link link = emission_link(spec);
  const Family family = emission_family(spec);
  for (int t = first; t < last; ++t) {
    out.add_node({emission_name(t), 1, family, link, {latent_name(t)}, true});
  }
  return out;
}

TreeModelSpec tree_preset(TreeLinkKind link, int depth) {
  TreeModelSpec s;
  s.depth = depth;
  s.link = link;
  if (link == TreeLinkKind::Linear) {
    s.sd = 0.15;
    s.root_sd = 0.2;
  } else {
    s.sd = 0.05;
    s.root_sd = 0.1;
  }
  return s;
}

std::string tree_node_name(int layer, int index) {
  return "x" + std::to_string(layer) + "_" + std::to_string(index);
}

ProgramGraph build_binary_tree(const TreeModelSpec& spec) {
  if (spec.depth < 1) throw std::invalid_argument("TreeModelSpec: depth must be >= 1");
  ProgramGraph g;
  const int width0 = 1 << spec.depth;
  for (int j = 0; j < width0; ++j) {
    g.add_node({tree_node_name(0, j), 1, Family::Gaussian,
                ConstantLink{Eigen::VectorXd::Zero(1),
                             Eigen::VectorXd::Constant(1, spec.root_sd)},
                {}, false});
  }
  const Eigen::VectorXd scale = Eigen::VectorXd::Constant(1, spec.sd);
  Link link;
  if (spec.link == TreeLinkKind::Linear) {
    Eigen::MatrixXd w(1, 2);
    w << 1.0, -1.0;
    link = AffineLink{w, Eigen::VectorXd::Zero(1), scale};
  } else {
    link = TanhDifferenceLink{scale};
  }
  for (int d = 1; d <= spec.depth; ++d) {
    const int width = 1 << (spec.depth - d);
    for (int j = 0; j < width; ++j) {
      g.add_node({tree_node_name(d, j), 1, Family::Gaussian, link,
                  {tree_node_name(d - 1, 2 * j), tree_node_name(d - 1, 2 * j + 1)},
                  d == spec.depth});
    }
  }
  return g;
}

RecurrentDrift build_rnn_drift(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](int r, int c) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = normal(rng);
    return m;
  };
  RecurrentDrift d;
  d.w1 = draw(5, 2);
  d.b1 = draw(5, 1);
  d.w2 = draw(5, 5);
  d.b2 = draw(5, 1);
  d.w3 = draw(2, 5);
  return d;
}

}  // namespace cflow
