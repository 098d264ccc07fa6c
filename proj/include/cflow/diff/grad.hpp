#pragma once

#include <functional>
#include <map>
#include <string>

#include "cflow/diff/param_store.hpp"
#include "cflow/diff/tape.hpp"

namespace cflow::diff {

/// A loss closure records a scalar on the given tape, reading parameters via
/// Tape::param. Any randomness must be drawn before the closure is built so
/// repeated evaluations are deterministic.
using LossFn = std::function<Var(Tape&)>;

using GradMap = std::map<std::string, Array>;

/// Records loss_fn once, back-propagates, and overwrites every gradient slot
/// in `params` with d(loss)/d(param). Returns the loss value.
double grad(const LossFn& loss_fn, ParamStore& params);

/// Forward evaluation only; gradient slots untouched.
double evaluate(const LossFn& loss_fn, ParamStore& params);

/// Central differences (f(p+h) - f(p-h)) / 2h for every parameter coordinate.
GradMap finite_diff_grad(const LossFn& loss_fn, ParamStore& params,
                         double step);

GradMap snapshot_grads(const ParamStore& params);

}  // namespace cflow::diff
