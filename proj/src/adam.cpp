#include "layoutret/adam.hpp"

#include <cmath>

#include "layoutret/errors.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

void AdamState::step(const ParamList& params, const ParamList& grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("optimizer_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const DenseMatrix& p = *params[i].tensor;
    const DenseMatrix& g = *grads[i].tensor;
    if (p.rows() != g.rows() || p.cols() != g.cols()) {
      throw ShapeError("optimizer_step: gradient shape mismatch for " + params[i].name);
    }
    if (!g.all_finite()) throw TrainingError("non-finite gradient in " + params[i].name);
  }

  ++steps_;
  const double t = static_cast<double>(steps_);
  const real c1 = static_cast<real>(1.0 - std::pow(double(config_.beta1), t));
  const real c2 = static_cast<real>(1.0 - std::pow(double(config_.beta2), t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    DenseMatrix& p = *params[i].tensor;
    const DenseMatrix& g = *grads[i].tensor;
    auto [it, inserted] = moments_.try_emplace(params[i].name);
    if (inserted) it->second = {p.zeros_like(), p.zeros_like()};
    auto m = it->second.first.data();
    auto v = it->second.second.data();
    auto pd = p.data();
    auto gd = g.data();
    for (std::size_t k = 0; k < pd.size(); ++k) {
      m[k] = config_.beta1 * m[k] + (1 - config_.beta1) * gd[k];
      v[k] = config_.beta2 * v[k] + (1 - config_.beta2) * gd[k] * gd[k];
      const real mhat = m[k] / c1;
      const real vhat = v[k] / c2;
      pd[k] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

}  // namespace layoutret::inline LAYOUTRET_ABI
