#pragma once

#include <Eigen/Dense>

#include "cflow/diff/kernels.hpp"

namespace cflow {

struct DiagNormalParams {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // standard deviations, strictly positive
};

struct BernoulliLogitParams {
  double logit = 0.0;
};

double normal_logpdf(const Eigen::VectorXd& v, const DiagNormalParams& p);

Eigen::VectorXd normal_rsample(const DiagNormalParams& p,
                               const Eigen::VectorXd& noise);

/// y * log g(l) + (1 - y) * log(1 - g(l)) in the form -softplus(-l) /
/// -softplus(l). Throws unless y is 0 or 1.
double bernoulli_logit_logpmf(double y, const BernoulliLogitParams& p);

/// 1 iff u < sigmoid(logit).
int bernoulli_sample(const BernoulliLogitParams& p, double u);

/// Generic forms used by program and guide code on a Tape or Eval.
template <class Ops>
typename Ops::Value normal_rsample(Ops& ops, const typename Ops::Value& mean,
                                   const typename Ops::Value& scale,
                                   const typename Ops::Value& noise) {
  return ops.add(mean, ops.mul(scale, noise));
}

template <class Ops>
typename Ops::Value bernoulli_logit_logpmf(Ops& ops, double y,
                                           const typename Ops::Value& logit) {
  if (y == 1.0) return ops.scale(ops.softplus(ops.scale(logit, -1.0)), -1.0);
  return ops.scale(ops.softplus(logit), -1.0);
}

}  // namespace cflow
