#pragma once

#include <string>
#include <utility>

#include "cflow/program/graph.hpp"

namespace cflow {

enum class SdeModelKind { Brownian, Lorenz, PopulationDynamics, Recurrent };
enum class EmissionKind { Regression, Classification };

std::string to_string(SdeModelKind kind);
SdeModelKind sde_model_from_string(const std::string& name);  // "BR", "LZ", ...

/// Discretized SDE with Gaussian transitions and an emission model.
struct SdeModelSpec {
  SdeModelKind kind = SdeModelKind::Brownian;
  int dim = 1;
  double diffusion = 1.0;  // sigma^2
  double dt = 1.0;
  int horizon = 40;        // T
  double init_mean = 0.0;
  double init_sd = 1.0;
  EmissionKind emission = EmissionKind::Regression;
  double noise_sd = 1.0;   // sigma_lk
  double gain = 2.0;       // k
  RecurrentDrift rnn;      // used when kind == Recurrent
};

/// Model constants as tabulated for each system (RNN weights left empty).
SdeModelSpec sde_preset(SdeModelKind kind);

void validate(const SdeModelSpec& spec);

/// Latent chain x0 -> ... -> x{T-1}; no emissions.
ProgramGraph build_sde_model(const SdeModelSpec& spec);

/// Drift mu(x) evaluated numerically (identity for Brownian motion).
Eigen::VectorXd sde_drift(const SdeModelSpec& spec, const Eigen::VectorXd& x);

std::string latent_name(int t);
std::string emission_name(int t);

/// Link of the emission y_t given x_t.
Link emission_link(const SdeModelSpec& spec);
Family emission_family(const SdeModelSpec& spec);

/// Adds an observed child y_t for every t in [first, last).
ProgramGraph attach_emissions(const ProgramGraph& g, const SdeModelSpec& spec,
                              int first, int last);

enum class TreeLinkKind { Linear, Tanh };

struct TreeModelSpec {
  int depth = 2;  // D
  TreeLinkKind link = TreeLinkKind::Linear;
  double sd = 0.15;       // sigma
  double root_sd = 0.2;   // sigma_0, layer 0
};

TreeModelSpec tree_preset(TreeLinkKind link, int depth);

std::string tree_node_name(int layer, int index);

/// Layer 0 holds 2^D zero-mean nodes; node j of layer d has parents 2j and
/// 2j+1 of layer d-1. The single node of layer D is observed.
ProgramGraph build_binary_tree(const TreeModelSpec& spec);

/// Weights of a 2 -> 5 -> 5 -> 2 tanh network, entries iid N(0, 1).
RecurrentDrift build_rnn_drift(Rng& rng);

}  // namespace cflow
