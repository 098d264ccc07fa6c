#include "cflow/diff/grad.hpp"

#include <stdexcept>

namespace cflow::diff {

double grad(const LossFn& loss_fn, ParamStore& params) {
  params.zero_grad();
  Tape tape(&params);
  Var loss = loss_fn(tape);
  tape.backward(loss);
  return loss.scalar();
}

double evaluate(const LossFn& loss_fn, ParamStore& params) {
  Tape tape(&params);
  return loss_fn(tape).scalar();
}

GradMap finite_diff_grad(const LossFn& loss_fn, ParamStore& params,
                         double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_grad: step <= 0");
  GradMap out;
  for (auto& [name, entry] : params) {
    Array g(entry.value.rows(), entry.value.cols());
    for (Eigen::Index i = 0; i < entry.value.size(); ++i) {
      const double original = entry.value(i);
      entry.value(i) = original + step;
      const double up = evaluate(loss_fn, params);
      entry.value(i) = original - step;
      const double down = evaluate(loss_fn, params);
      entry.value(i) = original;
      g(i) = (up - down) / (2.0 * step);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

GradMap snapshot_grads(const ParamStore& params) {
  GradMap out;
  for (const auto& [name, entry] : params) out.emplace(name, entry.grad);
  return out;
}

}  // namespace cflow::diff
