#pragma once

#include <cstdint>
#include <vector>

#include "cunmt/tensor.hpp"

namespace cunmt {

// Adam moment buffers for a flat list of parameter tensors; m/v shapes
// mirror the parameter shapes and step advances by exactly one per update.
struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState init_like(const std::vector<Tensor>& params, double beta1 = 0.9,
                             double beta2 = 0.999, double eps = 1e-8);
};

// Standard bias-corrected Adam update, applied in place. With lr == 0 the
// parameters are untouched while the moments still decay.
void adam_step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, double lr);

struct LrSchedule {
  std::int64_t warmup_steps = 400;
  double peak_lr = 3e-4;
};

// Linear warm-up to peak_lr, then inverse-square-root decay.
double lr_at(const LrSchedule& schedule, std::int64_t step);

}  // namespace cunmt
