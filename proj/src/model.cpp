#include "dlfs/model.hpp"

#include <cmath>
#include <string>

#include "dlfs/errors.hpp"

namespace dlfs {

int ModelConfig::total_stride() const {
  int s = 1;
  for (int b = 0; b + 1 < backbone_blocks(); ++b) s *= 2;
  return s;
}

int64_t ModelConfig::feature_size() const {
  int64_t hw = input_size;
  for (int b = 0; b + 1 < backbone_blocks(); ++b) hw /= 2;
  return hw;
}

int64_t ModelConfig::fusion_dim() const {
  int64_t d = 2 * g_dim;
  if (local_enabled()) d += 2 * static_cast<int64_t>(dlfs.total_keypoints()) * feature_channels();
  return d;
}

void ModelConfig::validate() const {
  if (channels.empty()) throw BadConfig("backbone needs at least one block");
  for (int c : channels)
    if (c < 1) throw BadConfig("backbone channels must be positive");
  if (input_size < 4) throw BadConfig("input_size too small");
  if (num_classes < 2) throw BadConfig("num_classes must be >= 2");
  if (g_dim < 1) throw BadConfig("g_dim must be >= 1");
  if (feature_size() < 3) throw BadConfig("final feature map must be at least 3x3");
  int64_t hw = feature_size();
  for (size_t s = 0; s < dlfs.scales.size(); ++s) {
    const DlfsScaleConfig& sc = dlfs.scales[s];
    if (sc.keypoints < 1) throw BadConfig("scale keypoint count must be >= 1");
    if (sc.conv_channels % sc.keypoints != 0)
      throw BadConfig("selection conv channels must be divisible by K");
    if (s > 0) {
      if (sc.pyramid_kernel < 1 || sc.pyramid_stride < 1) throw BadConfig("pyramid stage");
      hw = (hw - sc.pyramid_kernel) / sc.pyramid_stride + 1;
      if (hw < 1) throw BadConfig("pyramid stage collapses the map");
    }
    if (vi_pool < 1 || vi_pool > hw) throw BadConfig("vi_pool exceeds scale map size");
  }
}

ParamTensor& ModelParams::at(const std::string& path) {
  auto it = params.find(path);
  if (it == params.end()) throw BadConfig("unknown parameter path " + path);
  return it->second;
}

const ParamTensor& ModelParams::at(const std::string& path) const {
  auto it = params.find(path);
  if (it == params.end()) throw BadConfig("unknown parameter path " + path);
  return it->second;
}

void ModelParams::zero_grads() {
  for (auto& [name, p] : params) p.zero_grad();
}

namespace {

Tensor xavier(Rng& rng, std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return draw_uniform(rng, -a, a, std::move(shape));
}

Tensor xavier_conv(Rng& rng, int64_t cout, int64_t cin, int64_t k) {
  return xavier(rng, {cout, cin, k, k}, cin * k * k, cout * k * k);
}

Tensor xavier_fc(Rng& rng, int64_t n, int64_t d) { return xavier(rng, {n, d}, d, n); }

}  // namespace

ModelParams init_params(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelParams mp;
  // insertion order fixes the draw order; the map stores them sorted but the
  // draws below happen in this deterministic sequence
  auto put = [&](const std::string& name, Tensor t) {
    mp.params.emplace(name, ParamTensor(std::move(t)));
  };

  // both modality branches start from the same weights (they diverge during
  // training), mirroring two-stream setups that initialize each branch from
  // one pretrained backbone
  {
    int64_t cin = 3;
    for (int b = 0; b < config.backbone_blocks(); ++b) {
      const int64_t cout = config.channels[static_cast<size_t>(b)];
      Tensor w = xavier_conv(rng, cout, cin, 3);
      const std::string block = ".block" + std::to_string(b);
      put("rgb" + block + ".conv.w", w);
      put("d" + block + ".conv.w", std::move(w));
      put("rgb" + block + ".conv.b", Tensor({cout}));
      put("d" + block + ".conv.b", Tensor({cout}));
      cin = cout;
    }
    Tensor fc1 = xavier_fc(rng, config.g_dim, config.feature_channels());
    Tensor logits = xavier_fc(rng, config.num_classes, config.g_dim);
    for (const char* mod : {"rgb", "d"}) {
      const std::string g = std::string(mod) + ".glob";
      put(g + ".fc1.w", fc1);
      put(g + ".fc1.b", Tensor({config.g_dim}));
      put(g + ".logits.w", logits);
      put(g + ".logits.b", Tensor({config.num_classes}));
    }
  }

  if (config.local_enabled()) {
    const int64_t cf = config.feature_channels();
    for (size_t s = 0; s < config.dlfs.scales.size(); ++s) {
      const DlfsScaleConfig& sc = config.dlfs.scales[s];
      const std::string base = "dlfs.scale" + std::to_string(s);
      if (s > 0) {
        Tensor w = xavier_conv(rng, cf, cf, sc.pyramid_kernel);
        put(base + ".pyr.rgb.w", w);
        put(base + ".pyr.d.w", std::move(w));
        put(base + ".pyr.rgb.b", Tensor({cf}));
        put(base + ".pyr.d.b", Tensor({cf}));
      }
      put(base + ".sel.w", xavier_conv(rng, sc.conv_channels, 2 * cf, 1));
      put(base + ".sel.b", Tensor({sc.conv_channels}));
    }
    // one variational head, attached to the finest scale's response maps
    {
      const int k0 = config.dlfs.scales.front().keypoints;
      const int64_t flat = static_cast<int64_t>(k0) * config.vi_pool * config.vi_pool;
      put("vi.conv.w", xavier(rng, {config.num_classes, k0, config.vi_pool, config.vi_pool},
                              flat, config.num_classes));
      put("vi.conv.b", Tensor({config.num_classes}));
      put("vi.log_sigma", Tensor({config.num_classes}));
    }
  }

  put("fuse.w", xavier_fc(rng, config.num_classes, config.fusion_dim()));
  put("fuse.b", Tensor({config.num_classes}));
  return mp;
}

std::vector<DlfsScaleParams> dlfs_param_views(const ModelParams& params,
                                              const ModelConfig& config) {
  std::vector<DlfsScaleParams> views(config.dlfs.scales.size());
  for (size_t s = 0; s < views.size(); ++s) {
    const std::string base = "dlfs.scale" + std::to_string(s);
    if (s > 0) {
      views[s].pyr_w_rgb = &params.value(base + ".pyr.rgb.w");
      views[s].pyr_b_rgb = &params.value(base + ".pyr.rgb.b");
      views[s].pyr_w_d = &params.value(base + ".pyr.d.w");
      views[s].pyr_b_d = &params.value(base + ".pyr.d.b");
    }
    views[s].sel_w = &params.value(base + ".sel.w");
    views[s].sel_b = &params.value(base + ".sel.b");
  }
  return views;
}

namespace {

struct ModalityForward {
  Tensor features;  // final backbone map
  Tensor g_feat;    // [G]
  Tensor logits;    // [N]
};

ModalityForward modality_forward(const ModelParams& params, const ModelConfig& config,
                                 const char* mod, const Tensor& x, ModalityCache& cache) {
  ModalityForward out;
  Tensor cur = x;
  const int blocks = config.backbone_blocks();
  cache.conv.resize(static_cast<size_t>(blocks));
  cache.relu.resize(static_cast<size_t>(blocks));
  cache.pool.resize(static_cast<size_t>(blocks > 0 ? blocks - 1 : 0));
  for (int b = 0; b < blocks; ++b) {
    const std::string base = std::string(mod) + ".block" + std::to_string(b);
    auto [convd, conv_cache] = conv2d(cur, params.value(base + ".conv.w"),
                                      params.value(base + ".conv.b"), 1, 1);
    cache.conv[static_cast<size_t>(b)] = std::move(conv_cache);
    auto [activated, relu_cache] = relu_layer(convd);
    cache.relu[static_cast<size_t>(b)] = std::move(relu_cache);
    if (b + 1 < blocks) {
      auto [pooled, pool_cache] = max_pool(activated, static_cast<int>(activated.shape()[1] / 2));
      cache.pool[static_cast<size_t>(b)] = std::move(pool_cache);
      cur = std::move(pooled);
    } else {
      cur = std::move(activated);
    }
  }
  out.features = cur;

  const std::string g = std::string(mod) + ".glob";
  auto [gap, gap_cache] = global_avg_pool(out.features);
  cache.gap = gap_cache;
  auto [pre, fc1_cache] = fully_connected(gap, params.value(g + ".fc1.w"),
                                          params.value(g + ".fc1.b"));
  cache.fc1 = std::move(fc1_cache);
  auto [feat, fc1_relu] = relu_layer(pre);
  cache.fc1_relu = std::move(fc1_relu);
  out.g_feat = feat;
  auto [logits, logits_cache] = fully_connected(feat, params.value(g + ".logits.w"),
                                                params.value(g + ".logits.b"));
  cache.logits = std::move(logits_cache);
  out.logits = std::move(logits);
  return out;
}

// gradient on the modality's final feature map -> backbone param grads
void modality_backward(const ModelParams& params, const ModelConfig& config, const char* mod,
                       ModalityCache& cache, Tensor grad_features, ParamGrads& grads) {
  const int blocks = config.backbone_blocks();
  Tensor g = std::move(grad_features);
  for (int b = blocks - 1; b >= 0; --b) {
    const std::string base = std::string(mod) + ".block" + std::to_string(b);
    if (b + 1 < blocks) g = max_pool_backward(cache.pool[static_cast<size_t>(b)], g);
    g = relu_backward(cache.relu[static_cast<size_t>(b)], g);
    Conv2dGrads cg = conv2d_backward(cache.conv[static_cast<size_t>(b)],
                                     params.value(base + ".conv.w"), g);
    grads[base + ".conv.w"] = std::move(cg.grad_w);
    grads[base + ".conv.b"] = std::move(cg.grad_b);
    g = std::move(cg.grad_x);
  }
}

void add_into(Tensor& into, const Tensor& t) {
  if (into.size() == 0)
    into = t;
  else
    into = add(into, t);
}

}  // namespace

ModelForward model_forward(const ModelParams& params, const ModelConfig& config,
                           const Tensor& x_rgb, const Tensor& x_d) {
  const std::vector<int64_t> want{3, config.input_size, config.input_size};
  if (x_rgb.shape() != want || x_d.shape() != want)
    throw ShapeMismatch("model_forward input shapes");

  ModelForward out;
  ModalityForward rgb = modality_forward(params, config, "rgb", x_rgb, out.cache.rgb);
  ModalityForward d = modality_forward(params, config, "d", x_d, out.cache.d);
  out.f_rgb = rgb.features;
  out.f_d = d.features;
  out.g_rgb_logits = rgb.logits;
  out.g_d_logits = d.logits;

  const int64_t cf = config.feature_channels();
  const int64_t k_total = config.dlfs.total_keypoints();
  Tensor fused({config.fusion_dim()});
  int64_t off = 0;
  for (int64_t i = 0; i < config.g_dim; ++i) fused[off++] = rgb.g_feat[i];
  for (int64_t i = 0; i < config.g_dim; ++i) fused[off++] = d.g_feat[i];

  if (config.local_enabled()) {
    DlfsForwardResult dl = dlfs_forward(rgb.features, d.features, config.dlfs,
                                        dlfs_param_views(params, config));
    out.selected = dl.selected;
    out.keypoints = std::move(dl.keypoints);
    out.cache.dlfs = std::move(dl.cache);
    for (int64_t i = 0; i < k_total * cf; ++i) fused[off++] = out.selected.e_rgb[i];
    for (int64_t i = 0; i < k_total * cf; ++i) fused[off++] = out.selected.e_d[i];
  }

  auto [logits, fuse_cache] = fully_connected(fused, params.value("fuse.w"),
                                              params.value("fuse.b"));
  out.cache.fuse = std::move(fuse_cache);
  out.logits = std::move(logits);
  out.cache.valid = true;
  return out;
}

ParamGrads model_backward(ModelCache& cache, const ModelParams& params, const ModelConfig& config,
                          const LossGrads& lg) {
  if (!cache.valid) throw StaleCache("model cache");
  cache.valid = false;
  ParamGrads grads;

  const int64_t n = config.num_classes;
  const int64_t cf = config.feature_channels();
  const int64_t k_total = config.dlfs.total_keypoints();

  Tensor grad_logits = lg.logits.size() ? lg.logits : Tensor({n});
  if (grad_logits.shape() != std::vector<int64_t>{n}) throw ShapeMismatch("grad logits shape");

  FcGrads fuse = fully_connected_backward(cache.fuse, params.value("fuse.w"), grad_logits);
  grads["fuse.w"] = std::move(fuse.grad_w);
  grads["fuse.b"] = std::move(fuse.grad_b);

  Tensor grad_g_rgb({config.g_dim}), grad_g_d({config.g_dim});
  int64_t off = 0;
  for (int64_t i = 0; i < config.g_dim; ++i) grad_g_rgb[i] = fuse.grad_x[off++];
  for (int64_t i = 0; i < config.g_dim; ++i) grad_g_d[i] = fuse.grad_x[off++];

  Tensor grad_map_rgb, grad_map_d;  // gradient on the final backbone maps
  if (config.local_enabled()) {
    Tensor ge_rgb({k_total, cf}), ge_d({k_total, cf});
    for (int64_t i = 0; i < k_total * cf; ++i) ge_rgb[i] = fuse.grad_x[off++];
    for (int64_t i = 0; i < k_total * cf; ++i) ge_d[i] = fuse.grad_x[off++];
    if (lg.e_rgb.size()) ge_rgb = add(ge_rgb, lg.e_rgb);
    if (lg.e_d.size()) ge_d = add(ge_d, lg.e_d);

    DlfsBackwardResult dg = dlfs_backward(cache.dlfs, config.dlfs,
                                          dlfs_param_views(params, config), ge_rgb, ge_d,
                                          lg.grouped);
    for (size_t s = 0; s < config.dlfs.scales.size(); ++s) {
      const std::string base = "dlfs.scale" + std::to_string(s);
      if (s > 0) {
        grads[base + ".pyr.rgb.w"] = std::move(dg.scale_grads[s].pyr_w_rgb);
        grads[base + ".pyr.rgb.b"] = std::move(dg.scale_grads[s].pyr_b_rgb);
        grads[base + ".pyr.d.w"] = std::move(dg.scale_grads[s].pyr_w_d);
        grads[base + ".pyr.d.b"] = std::move(dg.scale_grads[s].pyr_b_d);
      }
      grads[base + ".sel.w"] = std::move(dg.scale_grads[s].sel_w);
      grads[base + ".sel.b"] = std::move(dg.scale_grads[s].sel_b);
    }
    add_into(grad_map_rgb, dg.grad_f_rgb);
    add_into(grad_map_d, dg.grad_f_d);
  }

  // global branches, including the auxiliary logit heads
  for (const char* mod : {"rgb", "d"}) {
    const bool is_rgb = (mod[0] == 'r');
    ModalityCache& mc = is_rgb ? cache.rgb : cache.d;
    const std::string g = std::string(mod) + ".glob";

    Tensor grad_feat = is_rgb ? grad_g_rgb : grad_g_d;
    const Tensor& aux = is_rgb ? lg.g_rgb_logits : lg.g_d_logits;
    if (aux.size()) {
      FcGrads lgd = fully_connected_backward(mc.logits, params.value(g + ".logits.w"), aux);
      grads[g + ".logits.w"] = std::move(lgd.grad_w);
      grads[g + ".logits.b"] = std::move(lgd.grad_b);
      grad_feat = add(grad_feat, lgd.grad_x);
    } else {
      grads[g + ".logits.w"] = Tensor(params.value(g + ".logits.w").shape());
      grads[g + ".logits.b"] = Tensor(params.value(g + ".logits.b").shape());
    }
    Tensor grad_pre = relu_backward(mc.fc1_relu, grad_feat);
    FcGrads f1 = fully_connected_backward(mc.fc1, params.value(g + ".fc1.w"), grad_pre);
    grads[g + ".fc1.w"] = std::move(f1.grad_w);
    grads[g + ".fc1.b"] = std::move(f1.grad_b);
    Tensor grad_map = global_avg_pool_backward(mc.gap, f1.grad_x);
    add_into(is_rgb ? grad_map_rgb : grad_map_d, grad_map);
  }

  modality_backward(params, config, "rgb", cache.rgb, std::move(grad_map_rgb), grads);
  modality_backward(params, config, "d", cache.d, std::move(grad_map_d), grads);
  return grads;
}

void accumulate_grads(ParamGrads& into, const ParamGrads& incr) {
  for (const auto& [name, g] : incr) {
    auto it = into.find(name);
    if (it == into.end()) {
      into.emplace(name, g);
    } else {
      Tensor& dst = it->second;
      if (!dst.same_shape(g)) throw ShapeMismatch("accumulate_grads for " + name);
      for (int64_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }
  }
}

void apply_grads(ModelParams& params, const ParamGrads& grads, double scale_factor) {
  for (const auto& [name, g] : grads) {
    Tensor& dst = params.at(name).grad;
    if (!dst.same_shape(g)) throw ShapeMismatch("gradient shape for " + name);
    for (int64_t i = 0; i < dst.size(); ++i) dst[i] += scale_factor * g[i];
  }
}

}  // namespace dlfs
