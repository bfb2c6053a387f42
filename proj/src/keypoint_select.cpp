#include "dlfs/keypoint_select.hpp"

#include <cmath>
#include <string>

#include "dlfs/errors.hpp"

namespace dlfs {

double norm_coord_from_index(int64_t v, int64_t extent) {
  if (extent <= 1) return 0.0;
  return 2.0 * static_cast<double>(v) / static_cast<double>(extent - 1) - 1.0;
}

double pixel_from_norm_coord(double xn, int64_t extent) {
  if (extent <= 1) return 0.0;
  return (xn + 1.0) * static_cast<double>(extent - 1) / 2.0;
}

std::pair<Tensor, GroupPoolCache> group_channel_pool(const Tensor& f_rgbd, const Tensor& conv_w,
                                                     const Tensor& conv_b, int k) {
  if (k < 1) throw BadParam("group_channel_pool needs K >= 1");
  const int64_t c = conv_w.shape()[0];
  if (c % k != 0)
    throw DivisibilityViolation("conv channels " + std::to_string(c) + " not divisible by K " +
                                std::to_string(k));
  auto [v, conv_cache] = conv2d(f_rgbd, conv_w, conv_b, 1, 0);
  const int64_t group = c / k;
  const int64_t h = v.shape()[1], w = v.shape()[2];
  Tensor m({k, h, w});
  for (int64_t j = 0; j < k; ++j) {
    double* dst = m.data() + j * h * w;
    for (int64_t i = 0; i < group; ++i) {
      const double* src = v.data() + (j * group + i) * h * w;
      for (int64_t p = 0; p < h * w; ++p) dst[p] += src[p];
    }
  }
  GroupPoolCache cache;
  cache.conv = std::move(conv_cache);
  cache.groups = k;
  cache.group_size = group;
  return {std::move(m), std::move(cache)};
}

Conv2dGrads group_channel_pool_backward(const GroupPoolCache& cache, const Tensor& conv_w,
                                        const Tensor& grad_m) {
  if (grad_m.rank() != 3 || grad_m.shape()[0] != cache.groups)
    throw ShapeMismatch("group pool backward grad shape");
  const int64_t h = grad_m.shape()[1], w = grad_m.shape()[2];
  // the group sum broadcasts each map's gradient to its C/K conv channels
  Tensor grad_v({cache.groups * cache.group_size, h, w});
  for (int64_t j = 0; j < cache.groups; ++j) {
    const double* src = grad_m.data() + j * h * w;
    for (int64_t i = 0; i < cache.group_size; ++i) {
      double* dst = grad_v.data() + (j * cache.group_size + i) * h * w;
      for (int64_t p = 0; p < h * w; ++p) dst[p] = src[p];
    }
  }
  return conv2d_backward(cache.conv, conv_w, grad_v);
}

std::pair<KeypointSet, SoftKeypointsCache> soft_keypoints(const Tensor& m) {
  if (m.rank() != 3) throw ShapeMismatch("soft_keypoints expects [K,H,W]");
  const int64_t k = m.shape()[0], h = m.shape()[1], w = m.shape()[2];
  KeypointSet set;
  set.grouped = m;
  set.attn = Tensor({k, h, w});
  set.x.resize(static_cast<size_t>(k));
  set.y.resize(static_cast<size_t>(k));
  SoftKeypointsCache cache;
  cache.h = h;
  cache.w = w;
  cache.softmax.reserve(static_cast<size_t>(k));
  for (int64_t j = 0; j < k; ++j) {
    Tensor slice({h, w}, std::vector<double>(m.data() + j * h * w, m.data() + (j + 1) * h * w));
    auto [hj, sm_cache] = softmax2d(slice);
    for (int64_t p = 0; p < h * w; ++p) set.attn[j * h * w + p] = hj[p];
    double xj = 0.0, yj = 0.0;
    for (int64_t u = 0; u < h; ++u) {
      const double yn = norm_coord_from_index(u, h);
      const double* row = hj.data() + u * w;
      for (int64_t v = 0; v < w; ++v) {
        xj += norm_coord_from_index(v, w) * row[v];
        yj += yn * row[v];
      }
    }
    set.x[static_cast<size_t>(j)] = xj;
    set.y[static_cast<size_t>(j)] = yj;
    cache.softmax.push_back(std::move(sm_cache));
  }
  return {std::move(set), std::move(cache)};
}

Tensor soft_keypoints_backward(const SoftKeypointsCache& cache, const std::vector<double>& grad_x,
                               const std::vector<double>& grad_y) {
  const int64_t k = static_cast<int64_t>(cache.softmax.size());
  if (static_cast<int64_t>(grad_x.size()) != k || static_cast<int64_t>(grad_y.size()) != k)
    throw ShapeMismatch("soft_keypoints backward coord grads");
  const int64_t h = cache.h, w = cache.w;
  Tensor grad_m({k, h, w});
  for (int64_t j = 0; j < k; ++j) {
    // the expectation is linear in h: dL/dh(u,v) = gx*xn(v) + gy*yn(u)
    Tensor grad_h({h, w});
    for (int64_t u = 0; u < h; ++u) {
      const double yn = norm_coord_from_index(u, h);
      for (int64_t v = 0; v < w; ++v)
        grad_h[u * w + v] = grad_x[static_cast<size_t>(j)] * norm_coord_from_index(v, w) +
                            grad_y[static_cast<size_t>(j)] * yn;
    }
    Tensor gm = softmax2d_backward(cache.softmax[static_cast<size_t>(j)], grad_h);
    for (int64_t p = 0; p < h * w; ++p) grad_m[j * h * w + p] = gm[p];
  }
  return grad_m;
}

namespace {

double clamp_norm_coord(double c) {
  if (std::fabs(c) > 1.0 + 1e-9)
    throw CoordOutOfRange("normalized coordinate " + std::to_string(c));
  return c < -1.0 ? -1.0 : (c > 1.0 ? 1.0 : c);
}

// Eq.-8 style kernel derivative factor at grid index v for position p.
double tent_sign(int64_t v, double p) {
  if (std::fabs(static_cast<double>(v) - p) >= 1.0) return 0.0;
  return static_cast<double>(v) >= p ? 1.0 : -1.0;
}

}  // namespace

std::pair<Tensor, BilinearCache> bilinear_sample(const Tensor& f, const std::vector<double>& x,
                                                 const std::vector<double>& y) {
  if (f.rank() != 3) throw ShapeMismatch("bilinear_sample expects [C,H,W]");
  if (x.size() != y.size()) throw ShapeMismatch("coordinate list lengths differ");
  const int64_t c = f.shape()[0], h = f.shape()[1], w = f.shape()[2];
  const int64_t k = static_cast<int64_t>(x.size());
  Tensor e({k, c});
  BilinearCache cache;
  cache.f = f;
  cache.px.resize(static_cast<size_t>(k));
  cache.py.resize(static_cast<size_t>(k));
  for (int64_t j = 0; j < k; ++j) {
    const double px = pixel_from_norm_coord(clamp_norm_coord(x[static_cast<size_t>(j)]), w);
    const double py = pixel_from_norm_coord(clamp_norm_coord(y[static_cast<size_t>(j)]), h);
    cache.px[static_cast<size_t>(j)] = px;
    cache.py[static_cast<size_t>(j)] = py;
    const int64_t x0 = static_cast<int64_t>(std::floor(px));
    const int64_t y0 = static_cast<int64_t>(std::floor(py));
    const int64_t x1 = std::min<int64_t>(x0 + 1, w - 1);
    const int64_t y1 = std::min<int64_t>(y0 + 1, h - 1);
    const double wx1 = px - static_cast<double>(x0), wx0 = 1.0 - wx1;
    const double wy1 = py - static_cast<double>(y0), wy0 = 1.0 - wy1;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* plane = f.data() + ch * h * w;
      e[j * c + ch] = wy0 * (wx0 * plane[y0 * w + x0] + wx1 * plane[y0 * w + x1]) +
                      wy1 * (wx0 * plane[y1 * w + x0] + wx1 * plane[y1 * w + x1]);
    }
  }
  cache.valid = true;
  return {std::move(e), std::move(cache)};
}

BilinearGrads bilinear_sample_backward(const BilinearCache& cache, const Tensor& grad_e) {
  if (!cache.valid) throw StaleCache("bilinear cache");
  const int64_t c = cache.f.shape()[0], h = cache.f.shape()[1], w = cache.f.shape()[2];
  const int64_t k = static_cast<int64_t>(cache.px.size());
  if (grad_e.rank() != 2 || grad_e.shape()[0] != k || grad_e.shape()[1] != c)
    throw ShapeMismatch("bilinear backward grad shape");
  BilinearGrads g;
  g.grad_f = Tensor(cache.f.shape());
  g.grad_x.assign(static_cast<size_t>(k), 0.0);
  g.grad_y.assign(static_cast<size_t>(k), 0.0);
  for (int64_t j = 0; j < k; ++j) {
    const double px = cache.px[static_cast<size_t>(j)];
    const double py = cache.py[static_cast<size_t>(j)];
    const int64_t x0 = static_cast<int64_t>(std::floor(px));
    const int64_t y0 = static_cast<int64_t>(std::floor(py));
    const int64_t x1 = std::min<int64_t>(x0 + 1, w - 1);
    const int64_t y1 = std::min<int64_t>(y0 + 1, h - 1);
    const double wx1 = px - static_cast<double>(x0), wx0 = 1.0 - wx1;
    const double wy1 = py - static_cast<double>(y0), wy0 = 1.0 - wy1;
    // contributing nodes (deduplicated when a coordinate sits on the border)
    const int64_t xs[2] = {x0, x1}, ys[2] = {y0, y1};
    const double wxs[2] = {wx0, wx1}, wys[2] = {wy0, wy1};
    const int nx = (x1 == x0) ? 1 : 2, ny = (y1 == y0) ? 1 : 2;
    double gpx = 0.0, gpy = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double ge = grad_e[j * c + ch];
      if (ge == 0.0) continue;
      const double* plane = cache.f.data() + ch * h * w;
      double* gplane = g.grad_f.data() + ch * h * w;
      for (int a = 0; a < ny; ++a)
        for (int b = 0; b < nx; ++b) {
          const double wgt = wys[a] * wxs[b];
          const double fv = plane[ys[a] * w + xs[b]];
          gplane[ys[a] * w + xs[b]] += ge * wgt;
          gpx += ge * wys[a] * fv * tent_sign(xs[b], px);
          gpy += ge * wxs[b] * fv * tent_sign(ys[a], py);
        }
    }
    // pixel-space to normalized-space; degenerate axes carry no gradient
    g.grad_x[static_cast<size_t>(j)] = (w > 1) ? gpx * static_cast<double>(w - 1) / 2.0 : 0.0;
    g.grad_y[static_cast<size_t>(j)] = (h > 1) ? gpy * static_cast<double>(h - 1) / 2.0 : 0.0;
  }
  return g;
}

namespace {

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const int64_t ca = a.shape()[0], cb = b.shape()[0];
  const int64_t h = a.shape()[1], w = a.shape()[2];
  if (b.shape()[1] != h || b.shape()[2] != w) throw ShapeMismatch("modality maps not aligned");
  Tensor out({ca + cb, h, w});
  std::copy(a.data(), a.data() + a.size(), out.data());
  std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
  return out;
}

}  // namespace

DlfsForwardResult dlfs_forward(const Tensor& f_rgb, const Tensor& f_d, const DlfsConfig& config,
                               const std::vector<DlfsScaleParams>& params) {
  if (config.scales.empty()) throw BadConfig("dlfs_forward needs at least one scale");
  if (params.size() != config.scales.size()) throw BadConfig("dlfs params per scale");
  if (f_rgb.rank() != 3 || !f_rgb.same_shape(f_d))
    throw ShapeMismatch("dlfs_forward modality maps");

  const int64_t cf = f_rgb.shape()[0];
  const int64_t k_total = config.total_keypoints();
  DlfsForwardResult result;
  result.selected.e_rgb = Tensor({k_total, cf});
  result.selected.e_d = Tensor({k_total, cf});
  result.cache.scales.resize(config.scales.size());
  result.keypoints.reserve(config.scales.size());

  Tensor cur_rgb = f_rgb, cur_d = f_d;
  int64_t row = 0;
  for (size_t s = 0; s < config.scales.size(); ++s) {
    const DlfsScaleConfig& sc = config.scales[s];
    DlfsScaleCache& scache = result.cache.scales[s];
    if (s > 0) {
      const DlfsScaleParams& p = params[s];
      auto [r, rc] = conv2d(cur_rgb, *p.pyr_w_rgb, *p.pyr_b_rgb, sc.pyramid_stride, 0);
      auto [d, dc] = conv2d(cur_d, *p.pyr_w_d, *p.pyr_b_d, sc.pyramid_stride, 0);
      cur_rgb = std::move(r);
      cur_d = std::move(d);
      scache.pyr_rgb = std::move(rc);
      scache.pyr_d = std::move(dc);
    }
    scache.map_h = cur_rgb.shape()[1];
    scache.map_w = cur_rgb.shape()[2];
    scache.cf = cf;

    Tensor f_rgbd = concat_channels(cur_rgb, cur_d);
    auto [m, pool_cache] = group_channel_pool(f_rgbd, *params[s].sel_w, *params[s].sel_b,
                                              sc.keypoints);
    scache.pool = std::move(pool_cache);
    auto [set, soft_cache] = soft_keypoints(m);
    scache.soft = std::move(soft_cache);

    auto [e_rgb, cache_rgb] = bilinear_sample(cur_rgb, set.x, set.y);
    auto [e_d, cache_d] = bilinear_sample(cur_d, set.x, set.y);
    scache.sample_rgb = std::move(cache_rgb);
    scache.sample_d = std::move(cache_d);
    for (int64_t j = 0; j < sc.keypoints; ++j)
      for (int64_t ch = 0; ch < cf; ++ch) {
        result.selected.e_rgb[(row + j) * cf + ch] = e_rgb[j * cf + ch];
        result.selected.e_d[(row + j) * cf + ch] = e_d[j * cf + ch];
      }
    row += sc.keypoints;
    result.keypoints.push_back(std::move(set));
  }
  result.cache.valid = true;
  return result;
}

DlfsBackwardResult dlfs_backward(DlfsCache& cache, const DlfsConfig& config,
                                 const std::vector<DlfsScaleParams>& params,
                                 const Tensor& grad_e_rgb, const Tensor& grad_e_d,
                                 const std::vector<Tensor>& grad_grouped) {
  if (!cache.valid) throw StaleCache("dlfs cache");
  const size_t n_scales = config.scales.size();
  if (cache.scales.size() != n_scales) throw StaleCache("dlfs cache scale count");
  if (!grad_grouped.empty() && grad_grouped.size() != n_scales)
    throw ShapeMismatch("grad_grouped must have one entry per scale");
  const int64_t cf = cache.scales.front().cf;
  const int64_t k_total = config.total_keypoints();
  if (grad_e_rgb.rank() != 2 || grad_e_rgb.shape()[0] != k_total || grad_e_rgb.shape()[1] != cf ||
      !grad_e_rgb.same_shape(grad_e_d))
    throw ShapeMismatch("dlfs backward selected-feature grads");

  DlfsBackwardResult result;
  result.scale_grads.resize(n_scales);

  // walk scales coarsest-first, pushing map gradients down the pyramid
  Tensor grad_next_rgb, grad_next_d;  // gradient on scale s maps from scale s+1
  int64_t row_end = k_total;
  for (size_t si = n_scales; si-- > 0;) {
    const DlfsScaleConfig& sc = config.scales[si];
    DlfsScaleCache& scache = cache.scales[si];
    const int64_t k = sc.keypoints;
    const int64_t row0 = row_end - k;
    row_end = row0;

    Tensor ge_rgb({k, cf}), ge_d({k, cf});
    for (int64_t j = 0; j < k; ++j)
      for (int64_t ch = 0; ch < cf; ++ch) {
        ge_rgb[j * cf + ch] = grad_e_rgb[(row0 + j) * cf + ch];
        ge_d[j * cf + ch] = grad_e_d[(row0 + j) * cf + ch];
      }

    BilinearGrads brgb = bilinear_sample_backward(scache.sample_rgb, ge_rgb);
    BilinearGrads bd = bilinear_sample_backward(scache.sample_d, ge_d);
    // the same coordinates sample both modalities
    std::vector<double> gx(static_cast<size_t>(k)), gy(static_cast<size_t>(k));
    for (int64_t j = 0; j < k; ++j) {
      gx[static_cast<size_t>(j)] = brgb.grad_x[static_cast<size_t>(j)] + bd.grad_x[static_cast<size_t>(j)];
      gy[static_cast<size_t>(j)] = brgb.grad_y[static_cast<size_t>(j)] + bd.grad_y[static_cast<size_t>(j)];
    }

    Tensor grad_m = soft_keypoints_backward(scache.soft, gx, gy);
    if (!grad_grouped.empty() && grad_grouped[si].size() > 0) {
      if (!grad_grouped[si].same_shape(grad_m)) throw ShapeMismatch("grad_grouped shape");
      grad_m = add(grad_m, grad_grouped[si]);
    }

    Conv2dGrads pool_grads = group_channel_pool_backward(scache.pool, *params[si].sel_w, grad_m);
    result.scale_grads[si].sel_w = std::move(pool_grads.grad_w);
    result.scale_grads[si].sel_b = std::move(pool_grads.grad_b);

    // total gradient on this scale's per-modality maps: sampling path +
    // selection-conv path + anything pushed down from coarser scales
    Tensor grad_map_rgb = std::move(brgb.grad_f);
    Tensor grad_map_d = std::move(bd.grad_f);
    const int64_t plane = scache.map_h * scache.map_w;
    for (int64_t ch = 0; ch < cf; ++ch)
      for (int64_t p = 0; p < plane; ++p) {
        grad_map_rgb[ch * plane + p] += pool_grads.grad_x[ch * plane + p];
        grad_map_d[ch * plane + p] += pool_grads.grad_x[(cf + ch) * plane + p];
      }
    if (grad_next_rgb.size() > 0) {
      grad_map_rgb = add(grad_map_rgb, grad_next_rgb);
      grad_map_d = add(grad_map_d, grad_next_d);
    }

    if (si > 0) {
      Conv2dGrads prgb = conv2d_backward(scache.pyr_rgb, *params[si].pyr_w_rgb, grad_map_rgb);
      Conv2dGrads pd = conv2d_backward(scache.pyr_d, *params[si].pyr_w_d, grad_map_d);
      result.scale_grads[si].pyr_w_rgb = std::move(prgb.grad_w);
      result.scale_grads[si].pyr_b_rgb = std::move(prgb.grad_b);
      result.scale_grads[si].pyr_w_d = std::move(pd.grad_w);
      result.scale_grads[si].pyr_b_d = std::move(pd.grad_b);
      grad_next_rgb = std::move(prgb.grad_x);
      grad_next_d = std::move(pd.grad_x);
    } else {
      result.grad_f_rgb = std::move(grad_map_rgb);
      result.grad_f_d = std::move(grad_map_d);
    }
  }
  cache.valid = false;
  return result;
}

}  // namespace dlfs
