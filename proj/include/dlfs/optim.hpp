#pragma once

#include "dlfs/tensor.hpp"

namespace dlfs {

// A learnable tensor with its gradient accumulator and Adam state.
struct ParamTensor {
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  int64_t step_count = 0;

  ParamTensor() = default;
  explicit ParamTensor(Tensor v)
      : value(std::move(v)),
        grad(value.shape()),
        adam_m(value.shape()),
        adam_v(value.shape()) {}

  void zero_grad() {
    for (int64_t i = 0; i < grad.size(); ++i) grad[i] = 0.0;
  }
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update from p.grad; increments step_count.
void adam_step(ParamTensor& p, const AdamConfig& cfg);

}  // namespace dlfs
