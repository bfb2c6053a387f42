#include "dlfs/rng.hpp"

#include <cmath>

#include "dlfs/errors.hpp"

namespace dlfs {

double Rng::uniform(double lo, double hi) {
  if (!(lo <= hi)) throw BadParam("uniform requires lo <= hi");
  return lo + (hi - lo) * next_uniform();
}

double Rng::normal(double mu, double sigma) {
  if (!(sigma >= 0.0)) throw BadParam("normal requires sigma >= 0");
  const double u1 = next_uniform();
  const double u2 = next_uniform();
  // 1-u1 is in (0,1], so the log is finite; u1 == 0 maps to z = 0.
  const double r = std::sqrt(-2.0 * std::log1p(-u1));
  const double z = r * std::cos(2.0 * M_PI * u2);
  return mu + sigma * z;
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  if (lo > hi) throw BadParam("uniform_int requires lo <= hi");
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int64_t>(next_u64() % span);
}

Tensor draw_uniform(Rng& rng, double lo, double hi, std::vector<int64_t> shape) {
  if (!(lo <= hi)) throw BadParam("draw_uniform requires lo <= hi");
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Tensor draw_normal(Rng& rng, double mu, double sigma, std::vector<int64_t> shape) {
  if (!(sigma >= 0.0)) throw BadParam("draw_normal requires sigma >= 0");
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(mu, sigma);
  return t;
}

}  // namespace dlfs
