#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cflow/diff/param_store.hpp"
#include "cflow/diff/tape.hpp"

namespace cflow::flow {

using Rng = std::mt19937_64;

enum class Activation { Softplus, Linear };

/// Original coordinates are gated by lambda; auxiliary coordinates get a zero
/// gate.
enum class GateRole { Original, Auxiliary };

inline constexpr double kDiagEps = 1e-4;

class FlowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raw (unconstrained) parameters of one block f . l_L . l_U.
struct HighwayBlockParams {
  Eigen::VectorXd upper_strict;    // strict upper triangle of U, row-major
  Eigen::VectorXd upper_raw_diag;  // U_kk = softplus(raw) + kDiagEps
  Eigen::VectorXd lower_strict;    // strict lower triangle of L; L_kk = 1
  Eigen::VectorXd bias_upper;
  Eigen::VectorXd bias_lower;
  Activation activation = Activation::Softplus;
};

struct HighwayNetworkParams {
  std::vector<HighwayBlockParams> blocks;  // shared gate, separate weights
  double raw_gate = 4.0;
  std::vector<GateRole> mask;
  bool gated = true;  // false: gate vector is zero on every coordinate

  int width() const { return static_cast<int>(mask.size()); }
};

struct FlowResult {
  Eigen::VectorXd output;
  double log_det = 0.0;
};

struct Gates {
  double lambda = 0.0;
  double gamma = 0.0;  // lambda^(3M)
  Eigen::VectorXd gate_vector;
};

Gates gates(double raw_gate, int blocks, const std::vector<GateRole>& mask,
            bool gated = true);

Eigen::MatrixXd realized_upper(const HighwayBlockParams& block);
Eigen::MatrixXd realized_lower(const HighwayBlockParams& block);

/// l*z + (1-l)*(U z + b); log det = sum_k log(l_k + (1-l_k) U_kk).
FlowResult upper_layer(const Eigen::VectorXd& z, const Eigen::MatrixXd& upper,
                       const Eigen::VectorXd& bias, const Eigen::VectorXd& gate);
/// l*z + (1-l)*(L z + b) with unit-diagonal L, so log det = 0.
FlowResult lower_layer(const Eigen::VectorXd& z, const Eigen::MatrixXd& lower,
                       const Eigen::VectorXd& bias, const Eigen::VectorXd& gate);
/// l*z + (1-l)*g(z) elementwise.
FlowResult activation_layer(const Eigen::VectorXd& z, Activation activation,
                            const Eigen::VectorXd& gate);
FlowResult block_forward(const Eigen::VectorXd& z, const HighwayBlockParams& block,
                         const Eigen::VectorXd& gate);
FlowResult network_forward(const Eigen::VectorXd& z, const HighwayNetworkParams& net);

/// Inverts network_forward by triangular back-substitution per linear layer
/// and safeguarded Newton per activation coordinate. Throws FlowError when a
/// root search does not converge or the round trip misses `tol`.
Eigen::VectorXd numeric_inverse(const Eigen::VectorXd& x,
                                const HighwayNetworkParams& net, double tol,
                                int max_iter = 200);

/// softplus(raw) + kDiagEps == 1.
double identity_raw_diag();

/// Softplus in every block but the last, which is linear.
std::vector<Activation> default_activations(int blocks);

/// Network with N(0, init_scale^2) weights and biases and near-unit diagonal.
HighwayNetworkParams random_network(int width, int original_dims, int blocks,
                                    Rng& rng, double init_scale = 0.01,
                                    double raw_gate = 4.0);

/// A highway network whose parameters live in a ParamStore under `prefix`.
class HighwayNetwork {
 public:
  struct Layout {
    int width = 1;
    int original_dims = 1;  // leading coordinates gated by lambda
    int blocks = 3;
    bool gated = true;
    std::vector<Activation> activations;  // empty: default_activations
  };

  struct Bound {
    struct Block {
      diff::Var upper_strict, upper_diag, lower_strict, bias_upper, bias_lower;
      Activation activation;
    };
    std::vector<Block> blocks;
    diff::Var gate, one_minus_gate;
    diff::Var linear_log_det;  // sum of upper-layer log dets (z independent)
  };

  struct Output {
    diff::Var value;
    diff::Var log_det;
  };

  HighwayNetwork() = default;
  HighwayNetwork(std::string prefix, Layout layout);

  const std::string& prefix() const { return prefix_; }
  const Layout& layout() const { return layout_; }
  std::vector<GateRole> mask() const;

  std::string param_name(int block, const char* field) const;
  std::string gate_name() const { return prefix_ + "/raw_gate"; }

  void initialize(diff::ParamStore& params, Rng& rng, double init_scale,
                  double raw_gate) const;
  HighwayNetworkParams read(const diff::ParamStore& params) const;
  void write(diff::ParamStore& params, const HighwayNetworkParams& net) const;
  std::size_t parameter_count() const;

  Bound bind(diff::Tape& tape) const;
  Output forward(diff::Tape& tape, const Bound& bound, diff::Var z) const;

 private:
  std::string prefix_;
  Layout layout_;
};

}  // namespace cflow::flow
