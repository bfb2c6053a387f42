#include "dlfs/losses.hpp"

#include <cmath>
#include <string>

#include "dlfs/errors.hpp"

namespace dlfs {

namespace {
// lower bound for the learnable log sigma of the variational head
constexpr double kLogSigmaFloor = 0.0;  // sigma >= 1
}  // namespace

std::pair<double, ViLossCache> vi_loss(const Tensor& m, int64_t label, int pool_size,
                                       const Tensor& conv_w, const Tensor& conv_b,
                                       const Tensor& log_sigma) {
  if (m.rank() != 3) throw ShapeMismatch("vi_loss expects [K,H,W]");
  if (conv_w.rank() != 4) throw ShapeMismatch("vi_loss conv_w expects [N,K,S,S]");
  const int64_t n = conv_w.shape()[0], k = conv_w.shape()[1];
  const int64_t s = conv_w.shape()[2];
  if (conv_w.shape()[3] != s || s != pool_size || m.shape()[0] != k)
    throw ShapeMismatch("vi_loss head shapes");
  if (conv_b.size() != n || log_sigma.size() != n) throw ShapeMismatch("vi_loss head vectors");
  if (label < 0 || label >= n) throw LabelOutOfRange("vi_loss label " + std::to_string(label));

  ViLossCache cache;
  auto [pooled, pool_cache] = max_pool(m, pool_size);
  cache.pool = std::move(pool_cache);
  cache.pooled = std::move(pooled);
  cache.label = label;

  // the SxS conv over the SxS pooled map has a single output position:
  // one dot product per class
  const int64_t flat = k * s * s;
  cache.u = Tensor({n});
  for (int64_t i = 0; i < n; ++i)
    cache.u[i] = conv_b[i] + dot(conv_w.data() + i * flat, cache.pooled.data(), flat);

  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    // sigma is floored: as the reconstruction error approaches zero the
    // optimal sigma collapses and the 1/sigma^2 gradients blow up otherwise
    const double ls = std::max(log_sigma[i], kLogSigmaFloor);
    const double sigma = std::exp(ls);
    const double err = (i == label ? 1.0 : 0.0) - cache.u[i];
    loss += ls + err * err / (2.0 * sigma * sigma);
  }
  return {loss, std::move(cache)};
}

ViLossGrads vi_loss_backward(const ViLossCache& cache, const Tensor& conv_w,
                             const Tensor& log_sigma, double grad_loss) {
  const int64_t n = conv_w.shape()[0];
  const int64_t flat = cache.pooled.size();
  ViLossGrads g;
  g.grad_conv_w = Tensor(conv_w.shape());
  g.grad_conv_b = Tensor({n});
  g.grad_log_sigma = Tensor({n});
  Tensor grad_pooled(cache.pooled.shape());
  for (int64_t i = 0; i < n; ++i) {
    const double sigma = std::exp(std::max(log_sigma[i], kLogSigmaFloor));
    const double err = (i == cache.label ? 1.0 : 0.0) - cache.u[i];
    const double du = grad_loss * (-err / (sigma * sigma));
    // below the floor the loss is flat in log sigma; at the floor only the
    // upward direction is live
    const double gls = grad_loss * (1.0 - err * err / (sigma * sigma));
    if (log_sigma[i] < kLogSigmaFloor)
      g.grad_log_sigma[i] = 0.0;
    else if (log_sigma[i] == kLogSigmaFloor)
      g.grad_log_sigma[i] = std::min(gls, 0.0);
    else
      g.grad_log_sigma[i] = gls;
    g.grad_conv_b[i] = du;
    const double* wrow = conv_w.data() + i * flat;
    double* gwrow = g.grad_conv_w.data() + i * flat;
    for (int64_t p = 0; p < flat; ++p) {
      gwrow[p] = du * cache.pooled[p];
      grad_pooled[p] += du * wrow[p];
    }
  }
  g.grad_m = max_pool_backward(cache.pool, grad_pooled);
  return g;
}

Tensor pixelwise_correlation_map(const Tensor& f_rgb, const Tensor& f_d) {
  if (f_rgb.rank() != 3 || !f_rgb.same_shape(f_d))
    throw ShapeMismatch("pixelwise_correlation_map shapes");
  const int64_t c = f_rgb.shape()[0], h = f_rgb.shape()[1], w = f_rgb.shape()[2];
  Tensor p({h, w});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      double ab = 0.0, aa = 0.0, bb = 0.0;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double a = f_rgb[(ch * h + i) * w + j];
        const double b = f_d[(ch * h + i) * w + j];
        ab += a * b;
        aa += a * a;
        bb += b * b;
      }
      const double na = std::sqrt(aa), nb = std::sqrt(bb);
      p[i * w + j] = (na < 1e-12 || nb < 1e-12) ? 0.0 : ab / (na * nb);
    }
  return p;
}

namespace {

// mean per-row cosine between two [K,C] matrices
double mean_row_cosine(const Tensor& a, const Tensor& b) {
  const int64_t k = a.shape()[0], c = a.shape()[1];
  double s = 0.0;
  for (int64_t j = 0; j < k; ++j) s += cosine_similarity(a.data() + j * c, b.data() + j * c, c);
  return s / static_cast<double>(k);
}

// d cos(a,b)/da = b/(|a||b|) - cos * a/|a|^2, zero for degenerate rows.
// Accumulates scale * dcos/da into ga (and symmetrically gb when non-null).
void add_row_cosine_grad(const double* a, const double* b, int64_t c, double scal, double* ga,
                         double* gb) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (int64_t i = 0; i < c; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na < 1e-12 || nb < 1e-12) return;
  const double inv = 1.0 / (na * nb);
  const double cosv = ab * inv;
  for (int64_t i = 0; i < c; ++i) {
    if (ga) ga[i] += scal * (b[i] * inv - cosv * a[i] / aa);
    if (gb) gb[i] += scal * (a[i] * inv - cosv * b[i] / bb);
  }
}

void require_kc(const Tensor& a, const Tensor& b, const char* who) {
  if (a.rank() != 2 || !a.same_shape(b)) throw ShapeMismatch(std::string(who) + " shapes");
}

}  // namespace

std::pair<double, CorrLossCache> multimodal_corr_loss(const Tensor& e_rgb, const Tensor& e_d) {
  require_kc(e_rgb, e_d, "multimodal_corr_loss");
  const double loss = 1.0 - mean_row_cosine(e_rgb, e_d);
  return {loss, CorrLossCache{e_rgb, e_d}};
}

CorrLossGrads multimodal_corr_loss_backward(const CorrLossCache& cache, double grad_loss) {
  const int64_t k = cache.e_rgb.shape()[0], c = cache.e_rgb.shape()[1];
  CorrLossGrads g;
  g.grad_e_rgb = Tensor(cache.e_rgb.shape());
  g.grad_e_d = Tensor(cache.e_d.shape());
  const double scal = -grad_loss / static_cast<double>(k);  // d(1 - mean cos)
  for (int64_t j = 0; j < k; ++j)
    add_row_cosine_grad(cache.e_rgb.data() + j * c, cache.e_d.data() + j * c, c, scal,
                        g.grad_e_rgb.data() + j * c, g.grad_e_d.data() + j * c);
  return g;
}

std::pair<double, TripletLossCache> triplet_corr_loss(const Tensor& e_a, const Tensor& e_p,
                                                      const Tensor& e_n, double margin) {
  require_kc(e_a, e_p, "triplet_corr_loss");
  require_kc(e_a, e_n, "triplet_corr_loss");
  if (margin < 0.0) throw BadParam("triplet margin must be >= 0");
  const double rho_ap = mean_row_cosine(e_a, e_p);
  const double rho_an = mean_row_cosine(e_a, e_n);
  const double raw = rho_an - rho_ap + margin;
  TripletLossCache cache{e_a, e_p, e_n, margin, raw > 0.0};
  return {raw > 0.0 ? raw : 0.0, std::move(cache)};
}

TripletLossGrads triplet_corr_loss_backward(const TripletLossCache& cache, double grad_loss) {
  TripletLossGrads g;
  g.grad_a = Tensor(cache.e_a.shape());
  g.grad_p = Tensor(cache.e_p.shape());
  g.grad_n = Tensor(cache.e_n.shape());
  if (!cache.active || grad_loss == 0.0) return g;
  const int64_t k = cache.e_a.shape()[0], c = cache.e_a.shape()[1];
  const double inv_k = grad_loss / static_cast<double>(k);
  for (int64_t j = 0; j < k; ++j) {
    // +rho(a,n) term
    add_row_cosine_grad(cache.e_a.data() + j * c, cache.e_n.data() + j * c, c, inv_k,
                        g.grad_a.data() + j * c, g.grad_n.data() + j * c);
    // -rho(a,p) term
    add_row_cosine_grad(cache.e_a.data() + j * c, cache.e_p.data() + j * c, c, -inv_k,
                        g.grad_a.data() + j * c, g.grad_p.data() + j * c);
  }
  return g;
}

std::pair<double, AuxCeCache> aux_ce_loss(const Tensor& g_rgb_logits, const Tensor& g_d_logits,
                                          int64_t label) {
  auto [l_rgb, c_rgb] = cross_entropy(g_rgb_logits, label);
  auto [l_d, c_d] = cross_entropy(g_d_logits, label);
  return {l_rgb + l_d, AuxCeCache{std::move(c_rgb), std::move(c_d)}};
}

AuxCeGrads aux_ce_loss_backward(const AuxCeCache& cache, double grad_loss) {
  return {cross_entropy_backward(cache.rgb, grad_loss), cross_entropy_backward(cache.d, grad_loss)};
}

LossBundle total_loss(double l_cls, double l_aux, double l_vi, double l_c, double lambda1,
                      double lambda2, double lambda3) {
  LossBundle b;
  b.l_cls = l_cls;
  b.l_aux = l_aux;
  b.l_vi = l_vi;
  b.l_c = l_c;
  b.lambda1 = lambda1;
  b.lambda2 = lambda2;
  b.lambda3 = lambda3;
  b.total = l_cls + lambda1 * l_aux + lambda2 * l_vi + lambda3 * l_c;
  return b;
}

}  // namespace dlfs
