#include "cunmt/optim.hpp"

#include <cmath>

#include "cunmt/errors.hpp"

namespace cunmt {

AdamState AdamState::init_like(const std::vector<Tensor>& params, double beta1, double beta2,
                               double eps) {
  AdamState s;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const Tensor& p : params) {
    s.m.push_back(Tensor::zeros(p.shape));
    s.v.push_back(Tensor::zeros(p.shape));
  }
  return s;
}

void adam_step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ContractError("adam_step: parameter/gradient/state count mismatch");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    if (!p.same_shape(g) || !p.same_shape(state.m[i])) {
      throw ContractError("adam_step: shape mismatch at parameter " + std::to_string(i) + ": " +
                          shape_str(p.shape) + " vs " + shape_str(g.shape));
    }
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      const double gj = g.data[j];
      m.data[j] = state.beta1 * m.data[j] + (1.0 - state.beta1) * gj;
      v.data[j] = state.beta2 * v.data[j] + (1.0 - state.beta2) * gj * gj;
      const double mhat = m.data[j] / bc1;
      const double vhat = v.data[j] / bc2;
      p.data[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double lr_at(const LrSchedule& schedule, std::int64_t step) {
  if (step < 0) throw ContractError("lr_at: negative step");
  if (schedule.warmup_steps <= 0) throw ContractError("lr_at: warmup_steps must be positive");
  const double w = static_cast<double>(schedule.warmup_steps);
  const double s = static_cast<double>(step);
  if (step <= schedule.warmup_steps) return schedule.peak_lr * s / w;
  return schedule.peak_lr * std::sqrt(w / s);
}

}  // namespace cunmt
