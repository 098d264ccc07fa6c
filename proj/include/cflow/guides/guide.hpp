#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cflow/diff/param_store.hpp"
#include "cflow/diff/tape.hpp"
#include "cflow/flow/highway.hpp"
#include "cflow/program/graph.hpp"

namespace cflow::guides {

using diff::Array;
using diff::Var;

enum class GuideKind { MF, MVN, ASVI, GF, CF, CFNonRes };

std::string to_string(GuideKind kind);
GuideKind guide_kind_from_string(const std::string& name);
const std::vector<GuideKind>& all_guide_kinds();

class GuideError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct GuideOptions {
  int aux_dim = 10;         // D per latent node (CF, CF-nonres)
  bool amortized = false;
  bool gated = true;        // false turns CF into CF-nonres
  int blocks = 3;
  double init_scale = 0.01;
  double gate_init = 4.0;
  bool linear_activations = false;  // every block linear
  int gf_aux_dim = 10;
  int hidden = 64;          // inference network width (amortized MF, GF)
};

/// Base noise for one joint sample, drawn before any tape is recorded.
/// `latent` holds one block per latent node in topological order. `aux` holds
/// one block per latent node for CF (same order) or a single block for GF.
struct NoiseDraw {
  std::vector<Array> latent;
  std::vector<Array> aux;
};

/// One reparameterized draw recorded on a tape.
struct TapeSample {
  std::vector<Var> values;  // indexed like the graph's nodes; observed nodes hold constants
  std::vector<Var> aux;     // post-flow auxiliaries
  Var log_q;                // log q(x, eps) or log q(x)
  Var log_r;                // invalid for guides without auxiliaries
};

class Guide;

/// A guide whose parameters have been bound to one tape for a fixed set of
/// observations. Sampling many times reuses the bound parameter leaves.
class BoundGuide {
 public:
  BoundGuide(const Guide& guide, diff::Tape& tape, const Assignment& observations);
  ~BoundGuide();
  BoundGuide(BoundGuide&&) noexcept;

  TapeSample sample(const NoiseDraw& noise);
  // log p(x, y) + log r(eps) - log q(x, eps) for one draw.
  Var elbo_term(const NoiseDraw& noise);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// A variational program built from a ProgramGraph. Owns its parameters.
class Guide {
 public:
  Guide(const ProgramGraph& g, GuideKind kind, const GuideOptions& options, Rng& init_rng);

  GuideKind kind() const { return kind_; }
  const GuideOptions& options() const { return options_; }
  const ProgramGraph& graph() const { return graph_; }
  diff::ParamStore& params() { return params_; }
  const diff::ParamStore& params() const { return params_; }

  bool has_aux() const;
  bool is_cf() const { return kind_ == GuideKind::CF || kind_ == GuideKind::CFNonRes; }
  const std::vector<int>& order() const { return order_; }          // topological
  const std::vector<int>& latent_order() const { return latent_; }  // topological
  int latent_dim() const { return latent_dim_; }
  int observation_dim() const { return obs_dim_; }

  // CF only: latent children of each node (graph order) and observed children.
  const std::vector<int>& latent_children(int node) const { return latent_children_[node]; }
  const std::vector<int>& observed_children(int node) const { return observed_children_[node]; }
  const flow::HighwayNetwork& network(int node) const { return networks_.at(node); }
  const flow::HighwayNetwork& global_network() const { return gf_network_; }

  std::string prefix(int node) const;  // parameter prefix of a node's bundle

  NoiseDraw draw_noise(Rng& rng) const;
  BoundGuide bind(diff::Tape& tape, const Assignment& observations) const;

  // Gate of every CF network (lambda = sigmoid(raw)); empty for other kinds.
  std::vector<double> gate_values() const;

 private:
  void build_mf();
  void build_mvn();
  void build_asvi();
  void build_gf(Rng& rng);
  void build_cf(Rng& rng);
  void build_inference_network(const std::string& prefix, int outputs, Rng& rng);

  ProgramGraph graph_;
  GuideKind kind_;
  GuideOptions options_;
  diff::ParamStore params_;
  std::vector<int> order_, latent_;
  std::vector<std::vector<int>> latent_children_, observed_children_;
  std::map<int, flow::HighwayNetwork> networks_;
  flow::HighwayNetwork gf_network_;
  int latent_dim_ = 0;
  int obs_dim_ = 0;

  friend class BoundGuide;
};

/// lambda * theta + (1 - lambda) * alpha on location and scale separately.
FamilyParams<Eigen::VectorXd> convex_update(const FamilyParams<Eigen::VectorXd>& theta,
                                            const Eigen::VectorXd& lambda_location,
                                            const Eigen::VectorXd& lambda_scale,
                                            const FamilyParams<Eigen::VectorXd>& alpha);

/// Base auxiliaries of a CF guide, indexed like the graph's nodes (empty for
/// nodes without auxiliaries), and their joint log density.
struct AuxDraw {
  std::vector<Eigen::VectorXd> base;
  double log_density = 0.0;
};
AuxDraw sample_aux(const Guide& guide, Rng& rng, const Assignment& observations = {});

/// A numeric joint draw from the guide.
struct GuideDraw {
  Assignment latents;
  std::vector<Eigen::VectorXd> aux;
  double log_q = 0.0;
  double log_r = 0.0;
};
GuideDraw guide_sample_and_logq(const Guide& guide, Rng& rng,
                                const Assignment& observations = {});
GuideDraw guide_sample_from_noise(const Guide& guide, const NoiseDraw& noise,
                                  const Assignment& observations = {});

/// n joint latent samples; row s of entry j holds sample s of latent node j.
std::map<std::string, Eigen::MatrixXd> sample_latents(const Guide& guide, Rng& rng,
                                                      int n, const Assignment& observations);

/// Mean over `noise` of the per-sample (augmented) ELBO, recorded on `tape`.
Var elbo_on_tape(diff::Tape& tape, const Guide& guide, const Assignment& observations,
                 std::span<const NoiseDraw> noise);

/// Per-sample ELBO values for n fresh draws.
std::vector<double> elbo_samples(Guide& guide, const Assignment& observations, int n,
                                 Rng& rng);
double elbo_estimate(Guide& guide, const Assignment& observations, int n, Rng& rng);

nlohmann::json checkpoint_to_json(const Guide& guide);
/// Restores parameters into `guide`; kind, graph hash and shapes must match.
void load_checkpoint(Guide& guide, const nlohmann::json& j);

}  // namespace cflow::guides
