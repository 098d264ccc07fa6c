#include "cflow/guides/guide.hpp"

#include <cctype>
#include <cmath>

#include "cflow/diff/kernels.hpp"
#include "cflow/program/serialize.hpp"

namespace cflow::guides {

namespace {

const double kUnitRawScale = std::log(std::expm1(1.0));  // softplus^-1(1)

Array zeros(int n) { return Array::Zero(n, 1); }

Array normal_array(Rng& rng, int rows, int cols, double sd) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Array a(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) a(r, c) = sd * normal(rng);
  return a;
}

Var accumulate(Var total, Var term) { return total.valid() ? total + term : term; }

}  // namespace

std::string to_string(GuideKind kind) {
  switch (kind) {
    case GuideKind::MF: return "MF";
    case GuideKind::MVN: return "MVN";
    case GuideKind::ASVI: return "ASVI";
    case GuideKind::GF: return "GF";
    case GuideKind::CF: return "CF";
    case GuideKind::CFNonRes: return "CF-nonres";
  }
  return "?";
}

GuideKind guide_kind_from_string(const std::string& name) {
  for (GuideKind k : all_guide_kinds()) {
    if (to_string(k) == name) return k;
  }
  throw GuideError("unknown guide kind '" + name + "'");
}

const std::vector<GuideKind>& all_guide_kinds() {
  static const std::vector<GuideKind> kinds = {GuideKind::MF, GuideKind::MVN,
                                               GuideKind::ASVI, GuideKind::GF,
                                               GuideKind::CF, GuideKind::CFNonRes};
  return kinds;
}

// ---------------------------------------------------------------------------
// Construction

Guide::Guide(const ProgramGraph& g, GuideKind kind, const GuideOptions& options,
             Rng& init_rng)
    : graph_(g), kind_(kind), options_(options) {
  if (kind_ == GuideKind::CF && !options_.gated) kind_ = GuideKind::CFNonRes;
  if (kind_ == GuideKind::CFNonRes) options_.gated = false;
  if (options_.aux_dim < 0 || options_.gf_aux_dim < 0 || options_.blocks < 1 ||
      options_.hidden < 1) {
    throw GuideError("Guide: invalid options");
  }
  order_ = topological_order(graph_);
  latent_ = graph_.latent_indices();
  if (latent_.empty()) throw GuideError("Guide: graph has no latent nodes");
  for (int j : latent_) {
    if (graph_.node(j).family != Family::Gaussian) {
      throw GuideError("Guide: latent node '" + graph_.node(j).name +
                       "' is not reparameterizable");
    }
    latent_dim_ += graph_.node(j).dim;
  }
  for (int j : graph_.observed_indices()) obs_dim_ += graph_.node(j).dim;

  latent_children_.resize(graph_.size());
  observed_children_.resize(graph_.size());
  for (int j : latent_) {
    for (int c : graph_.child_indices(j)) {
      (graph_.node(c).observed ? observed_children_ : latent_children_)[j].push_back(c);
    }
  }

  if (options_.amortized && (kind_ == GuideKind::MVN || kind_ == GuideKind::ASVI)) {
    throw GuideError("Guide: amortization is not available for " + to_string(kind_));
  }
  if (options_.amortized && obs_dim_ == 0) {
    throw GuideError("Guide: amortization needs observed nodes");
  }
  switch (kind_) {
    case GuideKind::MF: build_mf(); break;
    case GuideKind::MVN: build_mvn(); break;
    case GuideKind::ASVI: build_asvi(); break;
    case GuideKind::GF: build_gf(init_rng); break;
    case GuideKind::CF:
    case GuideKind::CFNonRes: build_cf(init_rng); break;
  }
  if (options_.amortized && (kind_ == GuideKind::MF || kind_ == GuideKind::GF)) {
    build_inference_network("amort", 2 * latent_dim_, init_rng);
  }
}

std::string Guide::prefix(int node) const {
  std::string k = to_string(kind_);
  for (char& c : k) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return k + "/" + graph_.node(node).name;
}

bool Guide::has_aux() const { return kind_ == GuideKind::GF || is_cf(); }

void Guide::build_mf() {
  if (options_.amortized) return;
  for (int j : latent_) {
    const int d = graph_.node(j).dim;
    params_.create(prefix(j) + "/mean", zeros(d));
    params_.create(prefix(j) + "/raw_scale", Array::Constant(d, 1, kUnitRawScale));
  }
}

void Guide::build_mvn() {
  params_.create("mvn/mean", zeros(latent_dim_));
  params_.create("mvn/chol_strict", zeros(diff::strict_count(latent_dim_)));
  params_.create("mvn/chol_raw_diag", Array::Constant(latent_dim_, 1, kUnitRawScale));
}

void Guide::build_asvi() {
  for (int j : latent_) {
    const int d = graph_.node(j).dim;
    params_.create(prefix(j) + "/raw_lambda_location", zeros(d));
    params_.create(prefix(j) + "/raw_lambda_scale", zeros(d));
    params_.create(prefix(j) + "/alpha_location", zeros(d));
    params_.create(prefix(j) + "/alpha_raw_scale", Array::Constant(d, 1, kUnitRawScale));
  }
}

void Guide::build_gf(Rng& rng) {
  flow::HighwayNetwork::Layout layout;
  layout.width = latent_dim_ + options_.gf_aux_dim;
  layout.original_dims = latent_dim_;
  layout.blocks = options_.blocks;
  layout.gated = false;
  if (options_.linear_activations) {
    layout.activations.assign(options_.blocks, flow::Activation::Linear);
  }
  gf_network_ = flow::HighwayNetwork("gf/flow", layout);
  gf_network_.initialize(params_, rng, options_.init_scale, options_.gate_init);
  if (!options_.amortized) {
    params_.create("gf/base_mean", zeros(latent_dim_));
    params_.create("gf/base_raw_scale", Array::Constant(latent_dim_, 1, kUnitRawScale));
  }
  if (options_.gf_aux_dim > 0) {
    params_.create("gf/r_mean", zeros(options_.gf_aux_dim));
    params_.create("gf/r_raw_scale", Array::Constant(options_.gf_aux_dim, 1, kUnitRawScale));
  }
}

void Guide::build_cf(Rng& rng) {
  const int aux = options_.aux_dim;
  for (int j : latent_) {
    const Node& node = graph_.node(j);
    flow::HighwayNetwork::Layout layout;
    layout.width = node.dim + aux;
    layout.original_dims = node.dim;
    layout.blocks = options_.blocks;
    layout.gated = options_.gated;
    if (options_.linear_activations) {
      layout.activations.assign(options_.blocks, flow::Activation::Linear);
    }
    flow::HighwayNetwork net(prefix(j) + "/flow", layout);
    net.initialize(params_, rng, options_.init_scale, options_.gate_init);
    networks_.emplace(j, std::move(net));
    if (aux == 0) continue;
    const int k = static_cast<int>(latent_children_[j].size());
    if (k > 0) params_.create(prefix(j) + "/coupling", Array::Zero(k + 1, aux));
    if (options_.amortized && !observed_children_[j].empty()) {
      int in = 0;
      for (int c : observed_children_[j]) in += graph_.node(c).dim;
      params_.create(prefix(j) + "/head_weight", normal_array(rng, aux, in, options_.init_scale));
      params_.create(prefix(j) + "/head_bias", zeros(aux));
    }
    params_.create(prefix(j) + "/r_mean", zeros(aux));
    params_.create(prefix(j) + "/r_raw_scale", Array::Constant(aux, 1, kUnitRawScale));
  }
}

void Guide::build_inference_network(const std::string& p, int outputs, Rng& rng) {
  const int h = options_.hidden;
  params_.create(p + "/w1", normal_array(rng, h, obs_dim_, 1.0 / std::sqrt(obs_dim_)));
  params_.create(p + "/b1", zeros(h));
  params_.create(p + "/w2", normal_array(rng, h, h, 1.0 / std::sqrt(h)));
  params_.create(p + "/b2", zeros(h));
  params_.create(p + "/w3", normal_array(rng, outputs, h, options_.init_scale));
  Array b3 = zeros(outputs);
  b3.bottomRows(outputs / 2).setConstant(kUnitRawScale);
  params_.create(p + "/b3", b3);
}

NoiseDraw Guide::draw_noise(Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](int n) {
    Array a(n, 1);
    for (int i = 0; i < n; ++i) a(i) = normal(rng);
    return a;
  };
  NoiseDraw noise;
  for (int j : latent_) noise.latent.push_back(draw(graph_.node(j).dim));
  if (is_cf()) {
    for (std::size_t i = 0; i < latent_.size(); ++i) noise.aux.push_back(draw(options_.aux_dim));
  } else if (kind_ == GuideKind::GF) {
    noise.aux.push_back(draw(options_.gf_aux_dim));
  }
  return noise;
}

BoundGuide Guide::bind(diff::Tape& tape, const Assignment& observations) const {
  return BoundGuide(*this, tape, observations);
}

std::vector<double> Guide::gate_values() const {
  std::vector<double> out;
  for (const auto& [j, net] : networks_) {
    out.push_back(diff::kernels::sigmoid(params_.value(net.gate_name())(0, 0)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tape-bound sampling

struct BoundGuide::Impl {
  const Guide& guide;
  diff::Tape& tape;
  const ProgramGraph& g;
  std::vector<Var> observed;  // constants, indexed like nodes

  // MF / amortized heads, per node
  std::map<int, Var> mean, scale;
  // MVN
  Var mvn_mean, mvn_strict, mvn_diag;
  // ASVI
  std::map<int, Var> lam_loc, lam_scale, alpha_loc, alpha_scale;
  // GF
  flow::HighwayNetwork::Bound gf_bound;
  Var gf_mean, gf_scale;
  // CF
  std::map<int, flow::HighwayNetwork::Bound> bounds;
  std::map<int, Var> coupling, head;
  // aux posterior r, per node (CF) or key -1 (GF)
  std::map<int, Var> r_mean, r_scale;

  Impl(const Guide& gd, diff::Tape& t, const Assignment& obs)
      : guide(gd), tape(t), g(gd.graph_) {
    observed.resize(g.size());
    for (int j : g.observed_indices()) {
      auto it = obs.find(g.node(j).name);
      if (it == obs.end()) continue;
      if (it->second.size() != g.node(j).dim) {
        throw GuideError("observation '" + g.node(j).name + "' has wrong dimension");
      }
      observed[j] = tape.constant(it->second);
    }
    const GuideKind kind = guide.kind_;
    if (guide.options_.amortized && (kind == GuideKind::MF || kind == GuideKind::GF)) {
      bind_inference_network();
    }
    switch (kind) {
      case GuideKind::MF:
        if (!guide.options_.amortized) {
          for (int j : guide.latent_) {
            mean[j] = tape.param(guide.prefix(j) + "/mean");
            scale[j] = tape.softplus(tape.param(guide.prefix(j) + "/raw_scale"));
          }
        }
        break;
      case GuideKind::MVN:
        mvn_mean = tape.param("mvn/mean");
        mvn_strict = tape.param("mvn/chol_strict");
        mvn_diag = tape.softplus(tape.param("mvn/chol_raw_diag"));
        break;
      case GuideKind::ASVI:
        for (int j : guide.latent_) {
          const std::string p = guide.prefix(j);
          lam_loc[j] = tape.sigmoid(tape.param(p + "/raw_lambda_location"));
          lam_scale[j] = tape.sigmoid(tape.param(p + "/raw_lambda_scale"));
          alpha_loc[j] = tape.param(p + "/alpha_location");
          alpha_scale[j] = tape.softplus(tape.param(p + "/alpha_raw_scale"));
        }
        break;
      case GuideKind::GF:
        gf_bound = guide.gf_network_.bind(tape);
        if (!guide.options_.amortized) {
          gf_mean = tape.param("gf/base_mean");
          gf_scale = tape.softplus(tape.param("gf/base_raw_scale"));
        }
        if (guide.options_.gf_aux_dim > 0) {
          r_mean[-1] = tape.param("gf/r_mean");
          r_scale[-1] = tape.softplus(tape.param("gf/r_raw_scale"));
        }
        break;
      case GuideKind::CF:
      case GuideKind::CFNonRes:
        bind_cf();
        break;
    }
  }

  Var observed_value(int j) const {
    if (!observed[j].valid()) {
      throw GuideError("missing observation for '" + g.node(j).name + "'");
    }
    return observed[j];
  }

  void bind_inference_network() {
    std::vector<Var> parts;
    for (int j : g.observed_indices()) parts.push_back(observed_value(j));
    const Var y = parts.size() == 1 ? parts[0] : tape.concat(parts);
    auto layer = [&](const char* w, const char* b, Var x) {
      return tape.matvec(tape.param(std::string("amort/") + w), x) +
             tape.param(std::string("amort/") + b);
    };
    const Var h1 = tape.tanh(layer("w1", "b1", y));
    const Var h2 = tape.tanh(layer("w2", "b2", h1));
    const Var out = layer("w3", "b3", h2);
    const int n = guide.latent_dim_;
    const Var means = tape.slice(out, 0, n);
    const Var scales = tape.softplus(tape.slice(out, n, n));
    if (guide.kind_ == GuideKind::GF) {
      gf_mean = means;
      gf_scale = scales;
      return;
    }
    int offset = 0;
    for (int j : guide.latent_) {
      const int d = g.node(j).dim;
      mean[j] = tape.slice(means, offset, d);
      scale[j] = tape.slice(scales, offset, d);
      offset += d;
    }
  }

  void bind_cf() {
    const int aux = guide.options_.aux_dim;
    for (int j : guide.latent_) {
      const std::string p = guide.prefix(j);
      bounds.emplace(j, guide.networks_.at(j).bind(tape));
      if (aux == 0) continue;
      if (!guide.latent_children_[j].empty()) {
        coupling[j] = tape.softmax(tape.param(p + "/coupling"));
      }
      if (guide.options_.amortized && !guide.observed_children_[j].empty()) {
        std::vector<Var> parts;
        for (int c : guide.observed_children_[j]) parts.push_back(observed_value(c));
        const Var y = parts.size() == 1 ? parts[0] : tape.concat(parts);
        head[j] = tape.matvec(tape.param(p + "/head_weight"), y) + tape.param(p + "/head_bias");
      }
      r_mean[j] = tape.param(p + "/r_mean");
      r_scale[j] = tape.softplus(tape.param(p + "/r_raw_scale"));
    }
  }

  std::vector<Var> initial_values() const { return observed; }

  Var prior_parents(const std::vector<Var>& values, int j) {
    return gather_parents<Var>(tape, g, j, values);
  }

  TapeSample sample(const NoiseDraw& noise) {
    if (noise.latent.size() != guide.latent_.size()) {
      throw GuideError("noise draw does not match the guide");
    }
    switch (guide.kind_) {
      case GuideKind::MF: return sample_mf(noise);
      case GuideKind::MVN: return sample_mvn(noise);
      case GuideKind::ASVI: return sample_asvi(noise);
      case GuideKind::GF: return sample_gf(noise);
      default: return sample_cf(noise);
    }
  }

  TapeSample sample_mf(const NoiseDraw& noise) {
    TapeSample s;
    s.values = initial_values();
    for (std::size_t i = 0; i < guide.latent_.size(); ++i) {
      const int j = guide.latent_[i];
      const Var x = normal_rsample(tape, mean[j], scale[j], tape.constant(noise.latent[i]));
      s.values[j] = x;
      s.log_q = accumulate(s.log_q, tape.gaussian_logpdf(x, mean[j], scale[j]));
    }
    return s;
  }

  Var joint_noise(const NoiseDraw& noise) {
    std::vector<Var> parts;
    for (const Array& a : noise.latent) parts.push_back(tape.constant(a));
    return parts.size() == 1 ? parts[0] : tape.concat(parts);
  }

  void split_latents(TapeSample& s, Var joint) {
    int offset = 0;
    for (int j : guide.latent_) {
      const int d = g.node(j).dim;
      s.values[j] = tape.slice(joint, offset, d);
      offset += d;
    }
  }

  TapeSample sample_mvn(const NoiseDraw& noise) {
    TapeSample s;
    s.values = initial_values();
    const Var xi = joint_noise(noise);
    const Var x = mvn_mean + tape.tri_matvec(mvn_strict, mvn_diag, xi, diff::Triangle::Lower);
    split_latents(s, x);
    const int n = guide.latent_dim_;
    s.log_q = tape.gaussian_logpdf(xi, tape.constant(zeros(n)), tape.constant(Array::Ones(n, 1))) -
              tape.sum(tape.log(mvn_diag));
    return s;
  }

  TapeSample sample_asvi(const NoiseDraw& noise) {
    TapeSample s;
    s.values = initial_values();
    for (std::size_t i = 0; i < guide.latent_.size(); ++i) {
      const int j = guide.latent_[i];
      const FamilyParams<Var> theta =
          evaluate_link(tape, g.node(j).link, prior_parents(s.values, j));
      const Var loc = lam_loc[j] * theta.location + (1.0 - lam_loc[j]) * alpha_loc[j];
      const Var sc = lam_scale[j] * theta.scale + (1.0 - lam_scale[j]) * alpha_scale[j];
      const Var x = normal_rsample(tape, loc, sc, tape.constant(noise.latent[i]));
      s.values[j] = x;
      s.log_q = accumulate(s.log_q, tape.gaussian_logpdf(x, loc, sc));
    }
    return s;
  }

  TapeSample sample_gf(const NoiseDraw& noise) {
    TapeSample s;
    s.values = initial_values();
    const int n = guide.latent_dim_;
    const int aux = guide.options_.gf_aux_dim;
    const Var xi = joint_noise(noise);
    const Var z = normal_rsample(tape, gf_mean, gf_scale, xi);
    s.log_q = tape.gaussian_logpdf(z, gf_mean, gf_scale);
    Var input = z;
    if (aux > 0) {
      const Var base_aux = tape.constant(noise.aux.at(0));
      const Var parts[] = {z, base_aux};
      input = tape.concat(parts);
      s.log_q = s.log_q + tape.gaussian_logpdf(base_aux, tape.constant(zeros(aux)),
                                               tape.constant(Array::Ones(aux, 1)));
    }
    const flow::HighwayNetwork::Output out = guide.gf_network_.forward(tape, gf_bound, input);
    s.log_q = s.log_q - out.log_det;
    split_latents(s, aux > 0 ? tape.slice(out.value, 0, n) : out.value);
    if (aux > 0) {
      const Var eps = tape.slice(out.value, n, aux);
      s.aux.push_back(eps);
      s.log_r = tape.gaussian_logpdf(eps, r_mean[-1], r_scale[-1]);
    }
    return s;
  }

  TapeSample sample_cf(const NoiseDraw& noise) {
    const int aux = guide.options_.aux_dim;
    const std::vector<int>& latent = guide.latent_;
    if (aux > 0 && noise.aux.size() != latent.size()) {
      throw GuideError("noise draw does not match the guide");
    }
    TapeSample s;
    s.values = initial_values();
    s.aux.resize(g.size());

    // Base auxiliaries, children before parents.
    std::vector<Var> base(g.size());
    Var log_aux;
    if (aux > 0) {
      std::map<int, std::size_t> slot;
      for (std::size_t i = 0; i < latent.size(); ++i) slot[latent[i]] = i;
      for (auto it = latent.rbegin(); it != latent.rend(); ++it) {
        const int k = *it;
        const Var xi = tape.constant(noise.aux[slot[k]]);
        Var mean = head.count(k) ? head[k] : Var{};
        Var a0;
        const std::vector<int>& children = guide.latent_children_[k];
        if (children.empty()) {
          a0 = tape.constant(Array::Ones(aux, 1));
        } else {
          const Var a = coupling[k];
          for (std::size_t c = 0; c < children.size(); ++c) {
            mean = accumulate(mean, tape.row(a, static_cast<int>(c)) * base[children[c]]);
          }
          a0 = tape.row(a, static_cast<int>(children.size()));
        }
        const Var noise_part = a0 * xi;
        base[k] = mean.valid() ? mean + noise_part : noise_part;
        const Var m = mean.valid() ? mean : tape.constant(zeros(aux));
        log_aux = accumulate(log_aux, tape.gaussian_logpdf(base[k], m, a0));
      }
    }

    // Cascade over latents, parents before children.
    Var log_det;
    for (std::size_t i = 0; i < latent.size(); ++i) {
      const int j = latent[i];
      const int d = g.node(j).dim;
      const FamilyParams<Var> theta =
          evaluate_link(tape, g.node(j).link, prior_parents(s.values, j));
      const Var z = normal_rsample(tape, theta.location, theta.scale,
                                   tape.constant(noise.latent[i]));
      s.log_q = accumulate(s.log_q, tape.gaussian_logpdf(z, theta.location, theta.scale));
      Var input = z;
      if (aux > 0) {
        const Var parts[] = {z, base[j]};
        input = tape.concat(parts);
      }
      const flow::HighwayNetwork::Output out =
          guide.networks_.at(j).forward(tape, bounds.at(j), input);
      log_det = accumulate(log_det, out.log_det);
      if (aux > 0) {
        s.values[j] = tape.slice(out.value, 0, d);
        s.aux[j] = tape.slice(out.value, d, aux);
        s.log_r = accumulate(s.log_r, tape.gaussian_logpdf(s.aux[j], r_mean[j], r_scale[j]));
      } else {
        s.values[j] = out.value;
      }
    }
    if (log_aux.valid()) s.log_q = s.log_q + log_aux;
    s.log_q = s.log_q - log_det;
    return s;
  }

  Var elbo_term(const NoiseDraw& noise) {
    TapeSample s = sample(noise);
    for (int j : g.observed_indices()) observed_value(j);
    const Var joint = joint_log_density(tape, g, s.values, guide.order_);
    Var elbo = joint - s.log_q;
    if (s.log_r.valid()) elbo = elbo + s.log_r;
    return elbo;
  }
};

BoundGuide::BoundGuide(const Guide& guide, diff::Tape& tape, const Assignment& observations)
    : impl_(std::make_unique<Impl>(guide, tape, observations)) {}
BoundGuide::~BoundGuide() = default;
BoundGuide::BoundGuide(BoundGuide&&) noexcept = default;

TapeSample BoundGuide::sample(const NoiseDraw& noise) { return impl_->sample(noise); }
Var BoundGuide::elbo_term(const NoiseDraw& noise) { return impl_->elbo_term(noise); }

// ---------------------------------------------------------------------------
// Numeric helpers

FamilyParams<Eigen::VectorXd> convex_update(const FamilyParams<Eigen::VectorXd>& theta,
                                            const Eigen::VectorXd& lambda_location,
                                            const Eigen::VectorXd& lambda_scale,
                                            const FamilyParams<Eigen::VectorXd>& alpha) {
  if (theta.location.size() != alpha.location.size() ||
      theta.location.size() != lambda_location.size() ||
      theta.scale.size() != alpha.scale.size() ||
      theta.scale.size() != lambda_scale.size()) {
    throw std::invalid_argument("convex_update: shape mismatch");
  }
  FamilyParams<Eigen::VectorXd> out;
  out.location = lambda_location.cwiseProduct(theta.location) +
                 (1.0 - lambda_location.array()).matrix().cwiseProduct(alpha.location);
  out.scale = lambda_scale.cwiseProduct(theta.scale) +
              (1.0 - lambda_scale.array()).matrix().cwiseProduct(alpha.scale);
  return out;
}

namespace {

// Sampling never back-propagates, so the store is only read.
diff::ParamStore* readable(const Guide& guide) {
  return const_cast<diff::ParamStore*>(&guide.params());
}

GuideDraw to_draw(const Guide& guide, const TapeSample& s) {
  GuideDraw d;
  const ProgramGraph& g = guide.graph();
  for (int j : guide.latent_order()) d.latents.emplace(g.node(j).name, s.values[j].value());
  for (const Var& a : s.aux) d.aux.push_back(a.valid() ? Eigen::VectorXd(a.value()) : Eigen::VectorXd());
  d.log_q = s.log_q.scalar();
  d.log_r = s.log_r.valid() ? s.log_r.scalar() : 0.0;
  return d;
}

}  // namespace

AuxDraw sample_aux(const Guide& guide, Rng& rng, const Assignment& observations) {
  if (!guide.is_cf()) throw GuideError("sample_aux: CF guides only");
  const int aux = guide.options().aux_dim;
  const std::vector<int>& latent = guide.latent_order();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Array> xi(latent.size());
  for (auto& a : xi) {
    a.resize(aux, 1);
    for (int i = 0; i < aux; ++i) a(i) = normal(rng);
  }
  const diff::ParamStore& params = guide.params();
  AuxDraw out;
  out.base.resize(guide.graph().size());
  for (std::size_t r = latent.size(); r-- > 0;) {
    const int k = latent[r];
    const std::string p = guide.prefix(k);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(aux);
    if (guide.options().amortized && !guide.observed_children(k).empty()) {
      Eigen::VectorXd y;
      std::vector<Array> parts;
      for (int c : guide.observed_children(k)) {
        auto it = observations.find(guide.graph().node(c).name);
        if (it == observations.end()) {
          throw GuideError("sample_aux: missing observation for '" +
                           guide.graph().node(c).name + "'");
        }
        parts.push_back(it->second);
      }
      std::vector<const Array*> ptrs;
      for (const Array& a : parts) ptrs.push_back(&a);
      mean += params.value(p + "/head_weight") * diff::kernels::concat(ptrs) +
              params.value(p + "/head_bias");
    }
    Eigen::VectorXd a0 = Eigen::VectorXd::Ones(aux);
    const std::vector<int>& children = guide.latent_children(k);
    if (!children.empty()) {
      const Array a = diff::kernels::softmax_columns(params.value(p + "/coupling"));
      for (std::size_t c = 0; c < children.size(); ++c) {
        mean += a.row(static_cast<Eigen::Index>(c)).transpose().cwiseProduct(out.base[children[c]]);
      }
      a0 = a.row(static_cast<Eigen::Index>(children.size())).transpose();
    }
    out.base[k] = mean + a0.cwiseProduct(xi[r]);
    out.log_density += diff::kernels::gaussian_logpdf(out.base[k], mean, a0);
  }
  return out;
}

GuideDraw guide_sample_from_noise(const Guide& guide, const NoiseDraw& noise,
                                  const Assignment& observations) {
  diff::Tape tape(readable(guide));
  BoundGuide bound = guide.bind(tape, observations);
  return to_draw(guide, bound.sample(noise));
}

GuideDraw guide_sample_and_logq(const Guide& guide, Rng& rng, const Assignment& observations) {
  return guide_sample_from_noise(guide, guide.draw_noise(rng), observations);
}

std::map<std::string, Eigen::MatrixXd> sample_latents(const Guide& guide, Rng& rng, int n,
                                                      const Assignment& observations) {
  if (n < 1) throw std::invalid_argument("sample_latents: n must be >= 1");
  const ProgramGraph& g = guide.graph();
  std::map<std::string, Eigen::MatrixXd> out;
  for (int j : guide.latent_order()) out[g.node(j).name].resize(n, g.node(j).dim);
  constexpr int kChunk = 32;
  for (int start = 0; start < n; start += kChunk) {
    diff::Tape tape(readable(guide));
    BoundGuide bound = guide.bind(tape, observations);
    for (int s = start; s < std::min(n, start + kChunk); ++s) {
      const TapeSample sample = bound.sample(guide.draw_noise(rng));
      for (int j : guide.latent_order()) {
        out[g.node(j).name].row(s) = sample.values[j].value().col(0).transpose();
      }
    }
  }
  return out;
}

Var elbo_on_tape(diff::Tape& tape, const Guide& guide, const Assignment& observations,
                 std::span<const NoiseDraw> noise) {
  if (noise.empty()) throw std::invalid_argument("elbo_on_tape: no samples");
  BoundGuide bound = guide.bind(tape, observations);
  Var total;
  for (const NoiseDraw& d : noise) total = accumulate(total, bound.elbo_term(d));
  return tape.scale(total, 1.0 / static_cast<double>(noise.size()));
}

std::vector<double> elbo_samples(Guide& guide, const Assignment& observations, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("elbo_samples: n must be >= 1");
  std::vector<double> out;
  out.reserve(n);
  constexpr int kChunk = 32;
  for (int start = 0; start < n; start += kChunk) {
    diff::Tape tape(&guide.params());
    BoundGuide bound = guide.bind(tape, observations);
    for (int s = start; s < std::min(n, start + kChunk); ++s) {
      out.push_back(bound.elbo_term(guide.draw_noise(rng)).scalar());
    }
  }
  return out;
}

double elbo_estimate(Guide& guide, const Assignment& observations, int n, Rng& rng) {
  const std::vector<double> v = elbo_samples(guide, observations, n, rng);
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// Checkpoints

nlohmann::json checkpoint_to_json(const Guide& guide) {
  nlohmann::json params = nlohmann::json::object();
  nlohmann::json shapes = nlohmann::json::object();
  for (const auto& [name, entry] : guide.params()) {
    const Array& v = entry.value;
    params[name] = std::vector<double>(v.data(), v.data() + v.size());  // column-major
    shapes[name] = {v.rows(), v.cols()};
  }
  return {{"kind", to_string(guide.kind())},
          {"graph_hash", graph_hash(guide.graph())},
          {"params", std::move(params)},
          {"shapes", std::move(shapes)}};
}

void load_checkpoint(Guide& guide, const nlohmann::json& j) {
  if (j.at("kind").get<std::string>() != to_string(guide.kind())) {
    throw GuideError("checkpoint: guide kind mismatch");
  }
  if (j.at("graph_hash").get<std::string>() != graph_hash(guide.graph())) {
    throw GuideError("checkpoint: graph hash mismatch");
  }
  const nlohmann::json& params = j.at("params");
  const nlohmann::json& shapes = j.at("shapes");
  if (params.size() != guide.params().size()) {
    throw GuideError("checkpoint: parameter set mismatch");
  }
  for (const auto& [name, entry] : guide.params()) {
    if (!params.contains(name)) throw GuideError("checkpoint: missing '" + name + "'");
    const auto shape = shapes.at(name).get<std::vector<Eigen::Index>>();
    const auto flat = params.at(name).get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] != entry.value.rows() ||
        shape[1] != entry.value.cols() ||
        static_cast<Eigen::Index>(flat.size()) != entry.value.size()) {
      throw GuideError("checkpoint: shape mismatch for '" + name + "'");
    }
  }
  for (auto& [name, entry] : guide.params()) {
    const auto flat = params.at(name).get<std::vector<double>>();
    entry.value = Eigen::Map<const Array>(flat.data(), entry.value.rows(), entry.value.cols());
  }
}

}  // namespace cflow::guides
