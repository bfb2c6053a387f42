#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "dlfs/rng.hpp"
#include "dlfs/tensor.hpp"

namespace dlfs {

// Central finite-difference verification of analytic gradients. The probe
// only ever evaluates the forward path, so it is independent of the
// backward implementations it checks.
struct FdResult {
  double max_rel_err = 0.0;
  int checked = 0;
  int skipped = 0;  // coordinates rejected by the smoothness guard
};

inline double fd_rel_err(double analytic, double numeric) {
  const double mag = std::max(std::fabs(analytic), std::fabs(numeric));
  if (mag < 1e-9) return 0.0;
  return std::fabs(analytic - numeric) / mag;
}

// Checks d loss / d param[i] against the values in `analytic` for the given
// coordinates. `loss` must read `param` afresh on every call. Coordinates
// where the half-step and full-step central differences disagree are
// skipped: there the probe crossed a relu/max/tent kink and the finite
// difference itself is meaningless.
inline FdResult fd_check_tensor(Tensor& param, const Tensor& analytic,
                                const std::function<double()>& loss,
                                const std::vector<int64_t>& indices, double eps = 1e-5) {
  FdResult r;
  for (int64_t i : indices) {
    const double saved = param[i];
    param[i] = saved + eps;
    const double lp = loss();
    param[i] = saved - eps;
    const double lm = loss();
    param[i] = saved + 0.5 * eps;
    const double lp2 = loss();
    param[i] = saved - 0.5 * eps;
    const double lm2 = loss();
    param[i] = saved;
    const double fd1 = (lp - lm) / (2.0 * eps);
    const double fd2 = (lp2 - lm2) / eps;
    const double scale = std::max({std::fabs(fd1), std::fabs(fd2), std::fabs(analytic[i]), 1e-8});
    if (std::fabs(fd1 - fd2) / scale > 1e-4) {
      ++r.skipped;
      continue;
    }
    ++r.checked;
    r.max_rel_err = std::max(r.max_rel_err, fd_rel_err(analytic[i], fd1));
  }
  return r;
}

// Up to `cap` distinct coordinates of an n-element tensor, drawn without
// replacement.
inline std::vector<int64_t> sample_indices(int64_t n, int64_t cap, Rng& rng) {
  std::vector<int64_t> idx;
  if (n <= cap) {
    idx.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    return idx;
  }
  std::vector<bool> used(static_cast<size_t>(n), false);
  while (static_cast<int64_t>(idx.size()) < cap) {
    const int64_t i = rng.uniform_int(0, n - 1);
    if (!used[static_cast<size_t>(i)]) {
      used[static_cast<size_t>(i)] = true;
      idx.push_back(i);
    }
  }
  return idx;
}

inline FdResult fd_check_tensor_sampled(Tensor& param, const Tensor& analytic,
                                        const std::function<double()>& loss, int64_t cap, Rng& rng,
                                        double eps = 1e-5) {
  return fd_check_tensor(param, analytic, loss, sample_indices(param.size(), cap, rng), eps);
}

inline void merge_fd(FdResult& into, const FdResult& other) {
  into.max_rel_err = std::max(into.max_rel_err, other.max_rel_err);
  into.checked += other.checked;
  into.skipped += other.skipped;
}

}  // namespace dlfs
