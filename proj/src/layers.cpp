#include "dlfs/layers.hpp"

#include <cmath>
#include <string>

#include "dlfs/errors.hpp"

namespace dlfs {

int64_t conv2d_out_dim(int64_t in, int64_t k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

std::pair<Tensor, Conv2dCache> conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                                      int stride, int pad) {
  if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1) throw ShapeMismatch("conv2d ranks");
  const int64_t cin = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const int64_t cout = w.shape()[0], k = w.shape()[2];
  if (w.shape()[1] != cin || w.shape()[3] != k || b.shape()[0] != cout)
    throw ShapeMismatch("conv2d weight/bias shapes");
  if (stride < 1 || pad < 0) throw BadParam("conv2d stride/pad");
  if (h + 2 * pad < k || wd + 2 * pad < k)
    throw KernelTooLarge("kernel " + std::to_string(k) + " on " + std::to_string(h) + "x" +
                         std::to_string(wd) + " pad " + std::to_string(pad));

  const int64_t hp = h + 2 * pad, wp = wd + 2 * pad;
  Conv2dCache cache;
  cache.x_padded = Tensor({cin, hp, wp});
  cache.in_h = h;
  cache.in_w = wd;
  cache.stride = stride;
  cache.pad = pad;
  for (int64_t c = 0; c < cin; ++c)
    for (int64_t i = 0; i < h; ++i) {
      const double* src = x.data() + (c * h + i) * wd;
      double* dst = cache.x_padded.data() + (c * hp + i + pad) * wp + pad;
      for (int64_t j = 0; j < wd; ++j) dst[j] = src[j];
    }

  const int64_t oh = conv2d_out_dim(h, k, stride, pad);
  const int64_t ow = conv2d_out_dim(wd, k, stride, pad);
  Tensor out({cout, oh, ow});
  const double* xp = cache.x_padded.data();
  for (int64_t co = 0; co < cout; ++co) {
    double* oplane = out.data() + co * oh * ow;
    const double bias = b[co];
    for (int64_t i = 0; i < oh * ow; ++i) oplane[i] = bias;
    for (int64_t ci = 0; ci < cin; ++ci)
      for (int64_t ky = 0; ky < k; ++ky)
        for (int64_t kx = 0; kx < k; ++kx) {
          const double wv = w[((co * cin + ci) * k + ky) * k + kx];
          for (int64_t oy = 0; oy < oh; ++oy) {
            const double* __restrict in = xp + (ci * hp + oy * stride + ky) * wp + kx;
            double* __restrict orow = oplane + oy * ow;
            if (stride == 1) {
              for (int64_t ox = 0; ox < ow; ++ox) orow[ox] += wv * in[ox];
            } else {
              for (int64_t ox = 0; ox < ow; ++ox) orow[ox] += wv * in[ox * stride];
            }
          }
        }
  }
  return {std::move(out), std::move(cache)};
}

Conv2dGrads conv2d_backward(const Conv2dCache& cache, const Tensor& w, const Tensor& grad_out) {
  const int64_t cout = w.shape()[0], cin = w.shape()[1], k = w.shape()[2];
  const int64_t hp = cache.x_padded.shape()[1], wp = cache.x_padded.shape()[2];
  const int stride = cache.stride, pad = cache.pad;
  const int64_t oh = conv2d_out_dim(cache.in_h, k, stride, pad);
  const int64_t ow = conv2d_out_dim(cache.in_w, k, stride, pad);
  if (grad_out.rank() != 3 || grad_out.shape()[0] != cout || grad_out.shape()[1] != oh ||
      grad_out.shape()[2] != ow)
    throw ShapeMismatch("conv2d_backward grad_out shape");

  Conv2dGrads g;
  g.grad_w = Tensor({cout, cin, k, k});
  g.grad_b = Tensor({cout});
  Tensor grad_xp({cin, hp, wp});
  const double* xp = cache.x_padded.data();
  for (int64_t co = 0; co < cout; ++co) {
    const double* gplane = grad_out.data() + co * oh * ow;
    double gb = 0.0;
    for (int64_t i = 0; i < oh * ow; ++i) gb += gplane[i];
    g.grad_b[co] = gb;
    for (int64_t ci = 0; ci < cin; ++ci)
      for (int64_t ky = 0; ky < k; ++ky)
        for (int64_t kx = 0; kx < k; ++kx) {
          const double wv = w[((co * cin + ci) * k + ky) * k + kx];
          double gw0 = 0.0, gw1 = 0.0, gw2 = 0.0, gw3 = 0.0;
          for (int64_t oy = 0; oy < oh; ++oy) {
            const double* __restrict in = xp + (ci * hp + oy * stride + ky) * wp + kx;
            double* __restrict gin = grad_xp.data() + (ci * hp + oy * stride + ky) * wp + kx;
            const double* __restrict grow = gplane + oy * ow;
            if (stride == 1) {
              for (int64_t ox = 0; ox < ow; ++ox) gin[ox] += wv * grow[ox];
              int64_t ox = 0;
              for (; ox + 3 < ow; ox += 4) {
                gw0 += grow[ox] * in[ox];
                gw1 += grow[ox + 1] * in[ox + 1];
                gw2 += grow[ox + 2] * in[ox + 2];
                gw3 += grow[ox + 3] * in[ox + 3];
              }
              for (; ox < ow; ++ox) gw0 += grow[ox] * in[ox];
            } else {
              for (int64_t ox = 0; ox < ow; ++ox) {
                gw0 += grow[ox] * in[ox * stride];
                gin[ox * stride] += wv * grow[ox];
              }
            }
          }
          g.grad_w[((co * cin + ci) * k + ky) * k + kx] = (gw0 + gw1) + (gw2 + gw3);
        }
  }

  g.grad_x = Tensor({cin, cache.in_h, cache.in_w});
  for (int64_t c = 0; c < cin; ++c)
    for (int64_t i = 0; i < cache.in_h; ++i) {
      const double* src = grad_xp.data() + (c * hp + i + pad) * wp + pad;
      double* dst = g.grad_x.data() + (c * cache.in_h + i) * cache.in_w;
      for (int64_t j = 0; j < cache.in_w; ++j) dst[j] = src[j];
    }
  return g;
}

std::pair<Tensor, FcCache> fully_connected(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 1 || w.rank() != 2 || b.rank() != 1) throw ShapeMismatch("fully_connected ranks");
  const int64_t d = x.shape()[0], n = w.shape()[0];
  if (w.shape()[1] != d || b.shape()[0] != n) throw ShapeMismatch("fully_connected shapes");
  Tensor y({n});
  for (int64_t i = 0; i < n; ++i) y[i] = b[i] + dot(w.data() + i * d, x.data(), d);
  return {std::move(y), FcCache{x}};
}

FcGrads fully_connected_backward(const FcCache& cache, const Tensor& w, const Tensor& grad_y) {
  const int64_t n = w.shape()[0], d = w.shape()[1];
  if (grad_y.rank() != 1 || grad_y.shape()[0] != n) throw ShapeMismatch("fc backward grad shape");
  FcGrads g;
  g.grad_x = Tensor({d});
  g.grad_w = Tensor({n, d});
  g.grad_b = grad_y;
  for (int64_t i = 0; i < n; ++i) {
    const double gi = grad_y[i];
    const double* wrow = w.data() + i * d;
    double* gwrow = g.grad_w.data() + i * d;
    const double* x = cache.x.data();
    for (int64_t j = 0; j < d; ++j) {
      g.grad_x[j] += gi * wrow[j];
      gwrow[j] = gi * x[j];
    }
  }
  return g;
}

std::pair<Tensor, GapCache> global_avg_pool(const Tensor& x) {
  if (x.rank() != 3) throw ShapeMismatch("global_avg_pool expects [C,H,W]");
  const int64_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  Tensor y({c});
  const double inv = 1.0 / static_cast<double>(h * w);
  for (int64_t i = 0; i < c; ++i) {
    double s = 0.0;
    const double* plane = x.data() + i * h * w;
    for (int64_t j = 0; j < h * w; ++j) s += plane[j];
    y[i] = s * inv;
  }
  return {std::move(y), GapCache{c, h, w}};
}

Tensor global_avg_pool_backward(const GapCache& cache, const Tensor& grad_y) {
  if (grad_y.rank() != 1 || grad_y.shape()[0] != cache.c) throw ShapeMismatch("gap backward");
  Tensor gx({cache.c, cache.h, cache.w});
  const double inv = 1.0 / static_cast<double>(cache.h * cache.w);
  for (int64_t i = 0; i < cache.c; ++i) {
    double* plane = gx.data() + i * cache.h * cache.w;
    const double v = grad_y[i] * inv;
    for (int64_t j = 0; j < cache.h * cache.w; ++j) plane[j] = v;
  }
  return gx;
}

std::pair<Tensor, MaxPoolCache> max_pool(const Tensor& x, int out_size) {
  if (x.rank() != 3) throw ShapeMismatch("max_pool expects [K,H,W]");
  const int64_t kc = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const int64_t s = out_size;
  if (s < 1 || s > h || s > w) throw BadOutputSize("max_pool out_size " + std::to_string(out_size));
  Tensor y({kc, s, s});
  MaxPoolCache cache;
  cache.in_shape = {kc, h, w};
  cache.argmax.assign(static_cast<size_t>(kc * s * s), 0);
  for (int64_t c = 0; c < kc; ++c)
    for (int64_t i = 0; i < s; ++i) {
      const int64_t r0 = i * h / s, r1 = (i + 1) * h / s;
      for (int64_t j = 0; j < s; ++j) {
        const int64_t c0 = j * w / s, c1 = (j + 1) * w / s;
        int64_t best_idx = (c * h + r0) * w + c0;
        double best = x[best_idx];
        for (int64_t r = r0; r < r1; ++r)
          for (int64_t q = c0; q < c1; ++q) {
            const int64_t idx = (c * h + r) * w + q;
            if (x[idx] > best) {
              best = x[idx];
              best_idx = idx;
            }
          }
        y[(c * s + i) * s + j] = best;
        cache.argmax[static_cast<size_t>((c * s + i) * s + j)] = best_idx;
      }
    }
  return {std::move(y), std::move(cache)};
}

Tensor max_pool_backward(const MaxPoolCache& cache, const Tensor& grad_out) {
  if (grad_out.size() != static_cast<int64_t>(cache.argmax.size()))
    throw ShapeMismatch("max_pool backward grad size");
  Tensor gx(cache.in_shape);
  for (int64_t i = 0; i < grad_out.size(); ++i)
    gx[cache.argmax[static_cast<size_t>(i)]] += grad_out[i];
  return gx;
}

std::pair<Tensor, ReluCache> relu_layer(const Tensor& x) {
  Tensor y = x;
  ReluCache cache;
  cache.mask = Tensor(x.shape());
  for (int64_t i = 0; i < y.size(); ++i) {
    if (y[i] > 0.0) {
      cache.mask[i] = 1.0;
    } else {
      y[i] = 0.0;
    }
  }
  return {std::move(y), std::move(cache)};
}

Tensor relu_backward(const ReluCache& cache, const Tensor& grad_out) {
  if (!grad_out.same_shape(cache.mask)) throw ShapeMismatch("relu backward grad shape");
  return mul(grad_out, cache.mask);
}

std::pair<Tensor, Softmax2dCache> softmax2d(const Tensor& m) {
  if (m.rank() != 2) throw ShapeMismatch("softmax2d expects [H,W]");
  Tensor h = m;
  const double mx = max_all(m).value;
  double z = 0.0;
  for (int64_t i = 0; i < h.size(); ++i) {
    h[i] = std::exp(h[i] - mx);
    z += h[i];
  }
  for (int64_t i = 0; i < h.size(); ++i) h[i] /= z;
  return {h, Softmax2dCache{h}};
}

Tensor softmax2d_backward(const Softmax2dCache& cache, const Tensor& grad_h) {
  const Tensor& h = cache.h;
  if (!grad_h.same_shape(h)) throw ShapeMismatch("softmax2d backward grad shape");
  double inner = 0.0;
  for (int64_t i = 0; i < h.size(); ++i) inner += grad_h[i] * h[i];
  Tensor gm(h.shape());
  for (int64_t i = 0; i < h.size(); ++i) gm[i] = h[i] * (grad_h[i] - inner);
  return gm;
}

std::pair<double, CrossEntropyCache> cross_entropy(const Tensor& logits, int64_t label) {
  if (logits.rank() != 1) throw ShapeMismatch("cross_entropy expects [N]");
  const int64_t n = logits.shape()[0];
  if (label < 0 || label >= n) throw LabelOutOfRange("label " + std::to_string(label));
  const double mx = max_all(logits).value;
  double z = 0.0;
  for (int64_t i = 0; i < n; ++i) z += std::exp(logits[i] - mx);
  const double log_z = std::log(z) + mx;
  CrossEntropyCache cache;
  cache.probs = Tensor({n});
  for (int64_t i = 0; i < n; ++i) cache.probs[i] = std::exp(logits[i] - log_z);
  cache.label = label;
  const double loss = log_z - logits[label];
  return {loss, std::move(cache)};
}

Tensor cross_entropy_backward(const CrossEntropyCache& cache, double grad_loss) {
  Tensor g = cache.probs;
  g[cache.label] -= 1.0;
  for (int64_t i = 0; i < g.size(); ++i) g[i] *= grad_loss;
  return g;
}

}  // namespace dlfs
