#include "dlfs/optim.hpp"

#include <cmath>

#include "dlfs/errors.hpp"

namespace dlfs {

void adam_step(ParamTensor& p, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw BadHyperparam("adam lr must be > 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0)) throw BadHyperparam("adam beta1 in [0,1)");
  if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) throw BadHyperparam("adam beta2 in [0,1)");
  if (!(cfg.eps > 0.0)) throw BadHyperparam("adam eps must be > 0");

  p.step_count += 1;
  const double t = static_cast<double>(p.step_count);
  const double corr1 = 1.0 - std::pow(cfg.beta1, t);
  const double corr2 = 1.0 - std::pow(cfg.beta2, t);
  for (int64_t i = 0; i < p.value.size(); ++i) {
    const double g = p.grad[i];
    p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
    p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = p.adam_m[i] / corr1;
    const double v_hat = p.adam_v[i] / corr2;
    p.value[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

}  // namespace dlfs
