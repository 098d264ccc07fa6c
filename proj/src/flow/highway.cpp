#include "cflow/flow/highway.hpp"

#include <cmath>

#include "cflow/diff/kernels.hpp"

namespace cflow::flow {

namespace k = diff::kernels;

Gates gates(double raw_gate, int blocks, const std::vector<GateRole>& mask,
            bool gated) {
  if (blocks < 1) throw std::invalid_argument("gates: M must be >= 1");
  Gates g;
  g.lambda = k::sigmoid(raw_gate);
  g.gamma = std::pow(g.lambda, 3 * blocks);
  g.gate_vector = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mask.size()));
  if (gated) {
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i] == GateRole::Original) g.gate_vector(i) = g.lambda;
    }
  }
  return g;
}

Eigen::MatrixXd realized_upper(const HighwayBlockParams& b) {
  const auto n = b.upper_raw_diag.size();
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(n, n);
  Eigen::Index idx = 0;
  for (Eigen::Index r = 0; r < n; ++r) {
    u(r, r) = k::softplus(b.upper_raw_diag(r)) + kDiagEps;
    for (Eigen::Index c = r + 1; c < n; ++c) u(r, c) = b.upper_strict(idx++);
  }
  return u;
}

Eigen::MatrixXd realized_lower(const HighwayBlockParams& b) {
  const auto n = b.bias_lower.size();
  Eigen::MatrixXd l = Eigen::MatrixXd::Identity(n, n);
  Eigen::Index idx = 0;
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < r; ++c) l(r, c) = b.lower_strict(idx++);
  }
  return l;
}

namespace {

void check_dims(const Eigen::VectorXd& z, Eigen::Index n, const char* op) {
  if (z.size() != n) throw std::invalid_argument(std::string(op) + ": dims mismatch");
}

}  // namespace

FlowResult upper_layer(const Eigen::VectorXd& z, const Eigen::MatrixXd& upper,
                       const Eigen::VectorXd& bias, const Eigen::VectorXd& gate) {
  const auto n = z.size();
  check_dims(bias, n, "upper_layer");
  check_dims(gate, n, "upper_layer");
  if (upper.rows() != n || upper.cols() != n) {
    throw std::invalid_argument("upper_layer: dims mismatch");
  }
  const Eigen::MatrixXd u = upper.triangularView<Eigen::Upper>();
  FlowResult r;
  r.output = gate.cwiseProduct(z) +
             (1.0 - gate.array()).matrix().cwiseProduct(u * z + bias);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = gate(i) + (1.0 - gate(i)) * u(i, i);
    if (!(d > 0.0)) {
      throw FlowError("upper_layer: non-positive effective diagonal");
    }
    r.log_det += std::log(d);
  }
  return r;
}

FlowResult lower_layer(const Eigen::VectorXd& z, const Eigen::MatrixXd& lower,
                       const Eigen::VectorXd& bias, const Eigen::VectorXd& gate) {
  const auto n = z.size();
  check_dims(bias, n, "lower_layer");
  check_dims(gate, n, "lower_layer");
  if (lower.rows() != n || lower.cols() != n) {
    throw std::invalid_argument("lower_layer: dims mismatch");
  }
  Eigen::MatrixXd l = lower.triangularView<Eigen::StrictlyLower>();
  l.diagonal().setOnes();
  FlowResult r;
  r.output = gate.cwiseProduct(z) +
             (1.0 - gate.array()).matrix().cwiseProduct(l * z + bias);
  r.log_det = 0.0;
  return r;
}

FlowResult activation_layer(const Eigen::VectorXd& z, Activation activation,
                            const Eigen::VectorXd& gate) {
  check_dims(gate, z.size(), "activation_layer");
  FlowResult r;
  if (activation == Activation::Linear) {
    r.output = z;
    return r;
  }
  r.output.resize(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    r.output(i) = gate(i) * z(i) + (1.0 - gate(i)) * k::softplus(z(i));
    r.log_det += std::log(gate(i) + (1.0 - gate(i)) * k::sigmoid(z(i)));
  }
  return r;
}

FlowResult block_forward(const Eigen::VectorXd& z, const HighwayBlockParams& block,
                         const Eigen::VectorXd& gate) {
  FlowResult u = upper_layer(z, realized_upper(block), block.bias_upper, gate);
  FlowResult l = lower_layer(u.output, realized_lower(block), block.bias_lower, gate);
  FlowResult a = activation_layer(l.output, block.activation, gate);
  a.log_det += u.log_det + l.log_det;
  return a;
}

FlowResult network_forward(const Eigen::VectorXd& z, const HighwayNetworkParams& net) {
  check_dims(z, net.width(), "network_forward");
  const Eigen::VectorXd gate =
      gates(net.raw_gate, static_cast<int>(net.blocks.size()), net.mask, net.gated)
          .gate_vector;
  FlowResult r{z, 0.0};
  for (const HighwayBlockParams& b : net.blocks) {
    FlowResult next = block_forward(r.output, b, gate);
    r.output = std::move(next.output);
    r.log_det += next.log_det;
  }
  return r;
}

namespace {

// Solves l*z + (1-l)*softplus(z) = y for z.
double invert_activation(double y, double l, int max_iter) {
  auto f = [&](double z) { return l * z + (1.0 - l) * k::softplus(z) - y; };
  double lo = std::min(y, 0.0) - 1.0;
  double hi = std::max(y, 0.0) + 1.0;
  int guard = 0;
  while (f(lo) > 0.0) {
    lo = 2.0 * lo - 1.0;
    if (++guard > max_iter || !std::isfinite(lo)) {
      throw FlowError("numeric_inverse: value outside activation range");
    }
  }
  while (f(hi) < 0.0) {
    hi = 2.0 * hi + 1.0;
    if (++guard > max_iter || !std::isfinite(hi)) {
      throw FlowError("numeric_inverse: value outside activation range");
    }
  }
  double z = 0.5 * (lo + hi);
  for (int it = 0; it < max_iter; ++it) {
    const double fz = f(z);
    if (fz == 0.0) return z;
    if (fz > 0.0) hi = z; else lo = z;
    const double slope = l + (1.0 - l) * k::sigmoid(z);
    double next = z - fz / slope;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - z) <= 1e-15 * std::max(1.0, std::abs(z))) return next;
    z = next;
  }
  throw FlowError("numeric_inverse: root search did not converge");
}

}  // namespace

Eigen::VectorXd numeric_inverse(const Eigen::VectorXd& x,
                                const HighwayNetworkParams& net, double tol,
                                int max_iter) {
  if (!(tol > 0.0)) throw std::invalid_argument("numeric_inverse: tol must be > 0");
  check_dims(x, net.width(), "numeric_inverse");
  const Eigen::VectorXd gate =
      gates(net.raw_gate, static_cast<int>(net.blocks.size()), net.mask, net.gated)
          .gate_vector;
  const Eigen::ArrayXd keep = gate.array();
  const Eigen::ArrayXd mix = 1.0 - keep;
  const auto n = x.size();
  Eigen::VectorXd y = x;
  for (auto it = net.blocks.rbegin(); it != net.blocks.rend(); ++it) {
    const HighwayBlockParams& b = *it;
    if (b.activation == Activation::Softplus) {
      for (Eigen::Index i = 0; i < n; ++i) y(i) = invert_activation(y(i), keep(i), max_iter);
    }
    // (diag(l) + diag(1-l) L) z = y - (1-l) b_L, forward substitution.
    const Eigen::MatrixXd lower = realized_lower(b);
    Eigen::VectorXd rhs = y - (mix * b.bias_lower.array()).matrix();
    Eigen::VectorXd z(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      double acc = rhs(r);
      for (Eigen::Index c = 0; c < r; ++c) acc -= mix(r) * lower(r, c) * z(c);
      z(r) = acc;  // diagonal is l + (1-l) * 1 = 1
    }
    // (diag(l) + diag(1-l) U) z = y - (1-l) b_U, back substitution.
    const Eigen::MatrixXd upper = realized_upper(b);
    rhs = z - (mix * b.bias_upper.array()).matrix();
    for (Eigen::Index r = n - 1; r >= 0; --r) {
      double acc = rhs(r);
      for (Eigen::Index c = r + 1; c < n; ++c) acc -= mix(r) * upper(r, c) * z(c);
      z(r) = acc / (keep(r) + mix(r) * upper(r, r));
    }
    y = std::move(z);
  }
  const double miss = (network_forward(y, net).output - x).cwiseAbs().maxCoeff();
  if (!(miss < tol)) {
    throw FlowError("numeric_inverse: round trip misses tolerance");
  }
  return y;
}

double identity_raw_diag() { return std::log(std::expm1(1.0 - kDiagEps)); }

std::vector<Activation> default_activations(int blocks) {
  std::vector<Activation> acts(static_cast<std::size_t>(blocks), Activation::Softplus);
  if (blocks > 0) acts.back() = Activation::Linear;
  return acts;
}

namespace {

Eigen::VectorXd normal_vector(Rng& rng, Eigen::Index n, double sd, double mean = 0.0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = mean + sd * normal(rng);
  return v;
}

}  // namespace

HighwayNetworkParams random_network(int width, int original_dims, int blocks,
                                    Rng& rng, double init_scale, double raw_gate) {
  HighwayNetworkParams net;
  net.raw_gate = raw_gate;
  net.mask.assign(static_cast<std::size_t>(width), GateRole::Auxiliary);
  for (int i = 0; i < original_dims && i < width; ++i) net.mask[i] = GateRole::Original;
  const auto acts = default_activations(blocks);
  const int strict = diff::strict_count(width);
  for (int b = 0; b < blocks; ++b) {
    HighwayBlockParams p;
    p.upper_strict = normal_vector(rng, strict, init_scale);
    p.upper_raw_diag = normal_vector(rng, width, init_scale, identity_raw_diag());
    p.lower_strict = normal_vector(rng, strict, init_scale);
    p.bias_upper = normal_vector(rng, width, init_scale);
    p.bias_lower = normal_vector(rng, width, init_scale);
    p.activation = acts[b];
    net.blocks.push_back(std::move(p));
  }
  return net;
}

// ---------------------------------------------------------------------------

HighwayNetwork::HighwayNetwork(std::string prefix, Layout layout)
    : prefix_(std::move(prefix)), layout_(std::move(layout)) {
  if (layout_.width < 1 || layout_.blocks < 1 || layout_.original_dims < 0 ||
      layout_.original_dims > layout_.width) {
    throw std::invalid_argument("HighwayNetwork: invalid layout");
  }
  if (layout_.activations.empty()) layout_.activations = default_activations(layout_.blocks);
  if (static_cast<int>(layout_.activations.size()) != layout_.blocks) {
    throw std::invalid_argument("HighwayNetwork: one activation per block");
  }
}

std::vector<GateRole> HighwayNetwork::mask() const {
  std::vector<GateRole> m(static_cast<std::size_t>(layout_.width), GateRole::Auxiliary);
  for (int i = 0; i < layout_.original_dims; ++i) m[i] = GateRole::Original;
  return m;
}

std::string HighwayNetwork::param_name(int block, const char* field) const {
  return prefix_ + "/block" + std::to_string(block) + "/" + field;
}

void HighwayNetwork::initialize(diff::ParamStore& params, Rng& rng,
                                double init_scale, double raw_gate) const {
  HighwayNetworkParams net =
      random_network(layout_.width, layout_.original_dims, layout_.blocks, rng,
                     init_scale, raw_gate);
  for (int b = 0; b < layout_.blocks; ++b) {
    const HighwayBlockParams& p = net.blocks[b];
    params.create(param_name(b, "upper_strict"), p.upper_strict);
    params.create(param_name(b, "upper_raw_diag"), p.upper_raw_diag);
    params.create(param_name(b, "lower_strict"), p.lower_strict);
    params.create(param_name(b, "bias_upper"), p.bias_upper);
    params.create(param_name(b, "bias_lower"), p.bias_lower);
  }
  params.create(gate_name(), diff::Array::Constant(1, 1, raw_gate));
}

HighwayNetworkParams HighwayNetwork::read(const diff::ParamStore& params) const {
  HighwayNetworkParams net;
  net.raw_gate = params.value(gate_name())(0, 0);
  net.mask = mask();
  net.gated = layout_.gated;
  for (int b = 0; b < layout_.blocks; ++b) {
    HighwayBlockParams p;
    p.upper_strict = params.value(param_name(b, "upper_strict"));
    p.upper_raw_diag = params.value(param_name(b, "upper_raw_diag"));
    p.lower_strict = params.value(param_name(b, "lower_strict"));
    p.bias_upper = params.value(param_name(b, "bias_upper"));
    p.bias_lower = params.value(param_name(b, "bias_lower"));
    p.activation = layout_.activations[b];
    net.blocks.push_back(std::move(p));
  }
  return net;
}

void HighwayNetwork::write(diff::ParamStore& params, const HighwayNetworkParams& net) const {
  params.set_value(gate_name(), diff::Array::Constant(1, 1, net.raw_gate));
  for (int b = 0; b < layout_.blocks; ++b) {
    const HighwayBlockParams& p = net.blocks.at(b);
    params.set_value(param_name(b, "upper_strict"), p.upper_strict);
    params.set_value(param_name(b, "upper_raw_diag"), p.upper_raw_diag);
    params.set_value(param_name(b, "lower_strict"), p.lower_strict);
    params.set_value(param_name(b, "bias_upper"), p.bias_upper);
    params.set_value(param_name(b, "bias_lower"), p.bias_lower);
  }
}

std::size_t HighwayNetwork::parameter_count() const {
  const std::size_t w = static_cast<std::size_t>(layout_.width);
  const std::size_t per_block = w * (w + 1) / 2 + w * (w - 1) / 2 + 2 * w;
  return per_block * static_cast<std::size_t>(layout_.blocks) + 1;
}

HighwayNetwork::Bound HighwayNetwork::bind(diff::Tape& tape) const {
  Bound b;
  const int w = layout_.width;
  if (layout_.gated) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(w);
    m.head(layout_.original_dims).setOnes();
    const diff::Var lambda = tape.sigmoid(tape.param(gate_name()));
    b.gate = tape.mul(lambda, tape.constant(m));
    b.one_minus_gate = 1.0 - b.gate;
  }
  diff::Var log_det;
  for (int i = 0; i < layout_.blocks; ++i) {
    Bound::Block blk;
    blk.upper_strict = tape.param(param_name(i, "upper_strict"));
    blk.upper_diag = tape.softplus(tape.param(param_name(i, "upper_raw_diag"))) + kDiagEps;
    blk.lower_strict = tape.param(param_name(i, "lower_strict"));
    blk.bias_upper = tape.param(param_name(i, "bias_upper"));
    blk.bias_lower = tape.param(param_name(i, "bias_lower"));
    blk.activation = layout_.activations[i];
    const diff::Var effective =
        layout_.gated ? b.gate + b.one_minus_gate * blk.upper_diag : blk.upper_diag;
    const diff::Var term = tape.sum(tape.log(effective));
    log_det = log_det.valid() ? log_det + term : term;
    b.blocks.push_back(blk);
  }
  b.linear_log_det = log_det;
  return b;
}

HighwayNetwork::Output HighwayNetwork::forward(diff::Tape& tape, const Bound& bound,
                                               diff::Var z) const {
  using diff::Var;
  const bool gated = layout_.gated;
  auto blend = [&](Var keep, Var moved) {
    return gated ? bound.gate * keep + bound.one_minus_gate * moved : moved;
  };
  Var h = z;
  Var log_det = bound.linear_log_det;
  for (const Bound::Block& blk : bound.blocks) {
    Var u = tape.tri_matvec(blk.upper_strict, blk.upper_diag, h, diff::Triangle::Upper) +
            blk.bias_upper;
    h = blend(h, u);
    Var l = tape.tri_matvec(blk.lower_strict, Var{}, h, diff::Triangle::Lower) +
            blk.bias_lower;
    h = blend(h, l);
    if (blk.activation == Activation::Softplus) {
      Var slope = tape.sigmoid(h);
      Var act = tape.softplus(h);
      Var term = gated ? tape.sum(tape.log(bound.gate + bound.one_minus_gate * slope))
                       : tape.sum(tape.log(slope));
      h = blend(h, act);
      log_det = log_det + term;
    }
  }
  return {h, log_det};
}

}  // namespace cflow::flow
