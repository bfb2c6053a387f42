#include "dlfs/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "dlfs/fd_check.hpp"
#include "dlfs/keypoint_select.hpp"
#include "dlfs/losses.hpp"
#include "dlfs/model.hpp"
#include "dlfs/train.hpp"

namespace dlfs {

namespace {

constexpr double kTolLinear = 1e-5;  // conv, fully connected, pooling
constexpr double kTolDefault = 1e-4;
constexpr double kTolModel = 1e-3;

double probe(const Tensor& t, const Tensor& dirs) {
  double s = 0.0;
  for (int64_t i = 0; i < t.size(); ++i) s += t[i] * dirs[i];
  return s;
}

struct Suite {
  std::vector<GradcheckReport>& out;
  int seeds;

  void run(const std::string& name, double tol,
           const std::function<void(Rng&, FdResult&)>& check) {
    GradcheckReport r;
    r.component = name;
    r.tolerance = tol;
    for (int s = 1; s <= seeds; ++s) {
      Rng rng(static_cast<uint64_t>(s) * 0x9E3779B9ull + 0xD1B54A32ull);
      FdResult fd;
      check(rng, fd);
      r.max_rel_err = std::max(r.max_rel_err, fd.max_rel_err);
      r.checked += fd.checked;
      r.skipped += fd.skipped;
    }
    r.pass = (seeds == 0) || (r.max_rel_err < tol && r.checked > 0);
    out.push_back(r);
  }
};

void check_conv2d(Rng& rng, FdResult& fd) {
  Tensor x = draw_normal(rng, 0.0, 1.0, {2, 5, 5});
  Tensor w = draw_normal(rng, 0.0, 0.5, {3, 2, 3, 3});
  Tensor b = draw_normal(rng, 0.0, 0.2, {3});
  const int stride = static_cast<int>(rng.uniform_int(1, 2));
  auto [y, cache] = conv2d(x, w, b, stride, 1);
  Tensor dirs = draw_normal(rng, 0.0, 1.0, y.shape());
  Conv2dGrads g = conv2d_backward(cache, w, dirs);
  auto loss = [&]() { return probe(conv2d(x, w, b, stride, 1).first, dirs); };
  merge_fd(fd, fd_check_tensor_sampled(x, g.grad_x, loss, 6, rng));
  merge_fd(fd, fd_check_tensor_sampled(w, g.grad_w, loss, 6, rng));
  merge_fd(fd, fd_check_tensor_sampled(b, g.grad_b, loss, 3, rng));
}

void check_fc(Rng& rng, FdResult& fd) {
  Tensor x = draw_normal(rng, 0.0, 1.0, {6});
  Tensor w = draw_normal(rng, 0.0, 0.5, {4, 6});
  Tensor b = draw_normal(rng, 0.0, 0.2, {4});
  auto [y, cache] = fully_connected(x, w, b);
  Tensor dirs = draw_normal(rng, 0.0, 1.0, {4});
  FcGrads g = fully_connected_backward(cache, w, dirs);
  auto loss = [&]() { return probe(fully_connected(x, w, b).first, dirs); };
  merge_fd(fd, fd_check_tensor_sampled(x, g.grad_x, loss, 6, rng));
  merge_fd(fd, fd_check_tensor_sampled(w, g.grad_w, loss, 8, rng));
  merge_fd(fd, fd_check_tensor_sampled(b, g.grad_b, loss, 4, rng));
}

void check_gap(Rng& rng, FdResult& fd) {
  Tensor x = draw_normal(rng, 0.0, 1.0, {3, 4, 4});
  auto [y, cache] = global_avg_pool(x);
  Tensor dirs = draw_normal(rng, 0.0, 1.0, {3});
  Tensor g = global_avg_pool_backward(cache, dirs);
  auto loss = [&]() { return probe(global_avg_pool(x).first, dirs); };
  merge_fd(fd, fd_check_tensor_sampled(x, g, loss, 8, rng));
}

void check_max_pool(Rng& rng, FdResult& fd) {
  Tensor x = draw_normal(rng, 0.0, 1.0, {2, 6, 6});
  auto [y, cache] = max_pool(x, 3);
  Tensor dirs = draw_normal(rng, 0.0, 1.0, y.shape());
  Tensor g = max_pool_backward(cache, dirs);
  auto loss = [&]() { return probe(max_pool(x, 3).first, dirs); };
  merge_fd(fd, fd_check_tensor_sampled(x, g, loss, 10, rng));
}

void check_softmax2d(Rng& rng, FdResult& fd) {
  Tensor m = draw_normal(rng, 0.0, 2.0, {4, 5});
  auto [h, cache] = softmax2d(m);
  Tensor dirs = draw_normal(rng, 0.0, 1.0, m.shape());
  Tensor g = softmax2d_backward(cache, dirs);
  auto loss = [&]() { return probe(softmax2d(m).first, dirs); };
  merge_fd(fd, fd_check_tensor_sampled(m, g, loss, 10, rng));
}

void check_cross_entropy(Rng& rng, FdResult& fd) {
  Tensor logits = draw_normal(rng, 0.0, 2.0, {5});
  const int64_t label = rng.uniform_int(0, 4);
  auto [l, cache] = cross_entropy(logits, label);
  Tensor g = cross_entropy_backward(cache);
  auto loss = [&]() { return cross_entropy(logits, label).first; };
  merge_fd(fd, fd_check_tensor_sampled(logits, g, loss, 5, rng));
}

void check_group_pool(Rng& rng, FdResult& fd) {
  Tensor f = draw_normal(rng, 0.0, 1.0, {4, 4, 4});
  Tensor w = draw_normal(rng, 0.0, 0.5, {6, 4, 1, 1});
  Tensor b = draw_normal(rng, 0.0, 0.2, {6});
  auto [m, cache] = group_channel_pool(f, w, b, 3);
  Tensor dirs = draw_normal(rng, 0.0, 1.0, m.shape());
  Conv2dGrads g = group_channel_pool_backward(cache, w, dirs);
  auto loss = [&]() { return probe(group_channel_pool(f, w, b, 3).first, dirs); };
  merge_fd(fd, fd_check_tensor_sampled(f, g.grad_x, loss, 8, rng));
  merge_fd(fd, fd_check_tensor_sampled(w, g.grad_w, loss, 8, rng));
  merge_fd(fd, fd_check_tensor_sampled(b, g.grad_b, loss, 3, rng));
}

void check_soft_keypoints(Rng& rng, FdResult& fd) {
  Tensor m = draw_normal(rng, 0.0, 1.0, {2, 4, 5});
  auto [set, cache] = soft_keypoints(m);
  std::vector<double> gx = {rng.normal(0, 1), rng.normal(0, 1)};
  std::vector<double> gy = {rng.normal(0, 1), rng.normal(0, 1)};
  Tensor g = soft_keypoints_backward(cache, gx, gy);
  auto loss = [&]() {
    auto [s, c] = soft_keypoints(m);
    return gx[0] * s.x[0] + gy[0] * s.y[0] + gx[1] * s.x[1] + gy[1] * s.y[1];
  };
  merge_fd(fd, fd_check_tensor_sampled(m, g, loss, 10, rng));
}

// probe coordinates at least 1e-3 pixel away from the tent kernel's kinks
double safe_pixel(Rng& rng, int64_t extent) {
  while (true) {
    const double p = rng.uniform(0.05, static_cast<double>(extent - 1) - 0.05);
    const double frac = p - std::floor(p);
    if (frac > 1e-3 && frac < 1.0 - 1e-3) return p;
  }
}

void check_bilinear(Rng& rng, FdResult& fd) {
  const int64_t h = 5, w = 6;
  Tensor f = draw_normal(rng, 0.0, 1.0, {3, h, w});
  std::vector<double> x = {2.0 * safe_pixel(rng, w) / static_cast<double>(w - 1) - 1.0};
  std::vector<double> y = {2.0 * safe_pixel(rng, h) / static_cast<double>(h - 1) - 1.0};
  auto [e, cache] = bilinear_sample(f, x, y);
  Tensor dirs = draw_normal(rng, 0.0, 1.0, e.shape());
  BilinearGrads g = bilinear_sample_backward(cache, dirs);
  auto loss = [&]() { return probe(bilinear_sample(f, x, y).first, dirs); };
  merge_fd(fd, fd_check_tensor_sampled(f, g.grad_f, loss, 10, rng));

  Tensor xt({1}, {x[0]});
  Tensor gxt({1}, {g.grad_x[0]});
  auto loss_x = [&]() { return probe(bilinear_sample(f, {xt[0]}, y).first, dirs); };
  merge_fd(fd, fd_check_tensor(xt, gxt, loss_x, {0}));
  Tensor yt({1}, {y[0]});
  Tensor gyt({1}, {g.grad_y[0]});
  auto loss_y = [&]() { return probe(bilinear_sample(f, x, {yt[0]}).first, dirs); };
  merge_fd(fd, fd_check_tensor(yt, gyt, loss_y, {0}));
}

void check_dlfs(Rng& rng, FdResult& fd) {
  DlfsConfig config;
  config.scales = {{2, 4, 3, 2}};
  Tensor f_rgb = draw_normal(rng, 0.0, 1.0, {2, 5, 5});
  Tensor f_d = draw_normal(rng, 0.0, 1.0, {2, 5, 5});
  Tensor sel_w = draw_normal(rng, 0.0, 0.5, {4, 4, 1, 1});
  Tensor sel_b = draw_normal(rng, 0.0, 0.1, {4});
  std::vector<DlfsScaleParams> params(1);
  params[0].sel_w = &sel_w;
  params[0].sel_b = &sel_b;
  DlfsForwardResult r = dlfs_forward(f_rgb, f_d, config, params);
  Tensor dirs_rgb = draw_normal(rng, 0.0, 1.0, r.selected.e_rgb.shape());
  Tensor dirs_d = draw_normal(rng, 0.0, 1.0, r.selected.e_d.shape());
  DlfsBackwardResult g = dlfs_backward(r.cache, config, params, dirs_rgb, dirs_d);
  auto loss = [&]() {
    DlfsForwardResult rr = dlfs_forward(f_rgb, f_d, config, params);
    return probe(rr.selected.e_rgb, dirs_rgb) + probe(rr.selected.e_d, dirs_d);
  };
  merge_fd(fd, fd_check_tensor_sampled(f_rgb, g.grad_f_rgb, loss, 6, rng));
  merge_fd(fd, fd_check_tensor_sampled(f_d, g.grad_f_d, loss, 6, rng));
  merge_fd(fd, fd_check_tensor_sampled(sel_w, g.scale_grads[0].sel_w, loss, 6, rng));
  merge_fd(fd, fd_check_tensor_sampled(sel_b, g.scale_grads[0].sel_b, loss, 3, rng));
}

void check_vi_loss(Rng& rng, FdResult& fd) {
  const int n = 3, k = 2, s = 2;
  Tensor m = draw_normal(rng, 0.0, 1.0, {k, 4, 4});
  Tensor w = draw_normal(rng, 0.0, 0.5, {n, k, s, s});
  Tensor b = draw_normal(rng, 0.0, 0.3, {n});
  Tensor ls = draw_normal(rng, 0.0, 0.3, {n});
  const int64_t label = rng.uniform_int(0, n - 1);
  auto [l, cache] = vi_loss(m, label, s, w, b, ls);
  ViLossGrads g = vi_loss_backward(cache, w, ls);
  auto loss = [&]() { return vi_loss(m, label, s, w, b, ls).first; };
  merge_fd(fd, fd_check_tensor_sampled(w, g.grad_conv_w, loss, 6, rng));
  merge_fd(fd, fd_check_tensor_sampled(b, g.grad_conv_b, loss, 3, rng));
  merge_fd(fd, fd_check_tensor_sampled(ls, g.grad_log_sigma, loss, 3, rng));
  merge_fd(fd, fd_check_tensor_sampled(m, g.grad_m, loss, 8, rng));
}

void check_corr_loss(Rng& rng, FdResult& fd) {
  Tensor a = draw_normal(rng, 0.0, 1.0, {3, 4});
  Tensor b = draw_normal(rng, 0.0, 1.0, {3, 4});
  auto [l, cache] = multimodal_corr_loss(a, b);
  CorrLossGrads g = multimodal_corr_loss_backward(cache);
  auto loss = [&]() { return multimodal_corr_loss(a, b).first; };
  merge_fd(fd, fd_check_tensor_sampled(a, g.grad_e_rgb, loss, 8, rng));
  merge_fd(fd, fd_check_tensor_sampled(b, g.grad_e_d, loss, 8, rng));
}

void check_triplet_loss(Rng& rng, FdResult& fd) {
  while (true) {
    Tensor a = draw_normal(rng, 0.0, 1.0, {3, 4});
    Tensor p = draw_normal(rng, 0.0, 1.0, {3, 4});
    Tensor n = draw_normal(rng, 0.0, 1.0, {3, 4});
    auto [l, cache] = triplet_corr_loss(a, p, n, 1.0);
    if (l < 0.05) continue;  // keep the probe away from the hinge
    TripletLossGrads g = triplet_corr_loss_backward(cache);
    auto loss = [&]() { return triplet_corr_loss(a, p, n, 1.0).first; };
    merge_fd(fd, fd_check_tensor_sampled(a, g.grad_a, loss, 6, rng));
    merge_fd(fd, fd_check_tensor_sampled(p, g.grad_p, loss, 6, rng));
    merge_fd(fd, fd_check_tensor_sampled(n, g.grad_n, loss, 6, rng));
    return;
  }
}

void check_aux_ce(Rng& rng, FdResult& fd) {
  Tensor ga = draw_normal(rng, 0.0, 2.0, {4});
  Tensor gb = draw_normal(rng, 0.0, 2.0, {4});
  const int64_t label = rng.uniform_int(0, 3);
  auto [l, cache] = aux_ce_loss(ga, gb, label);
  AuxCeGrads g = aux_ce_loss_backward(cache);
  auto loss = [&]() { return aux_ce_loss(ga, gb, label).first; };
  merge_fd(fd, fd_check_tensor_sampled(ga, g.grad_rgb, loss, 4, rng));
  merge_fd(fd, fd_check_tensor_sampled(gb, g.grad_d, loss, 4, rng));
}

void check_full_model(Rng& rng, FdResult& fd) {
  ModelConfig config;
  config.input_size = 8;
  config.channels = {4, 8};
  config.num_classes = 2;
  config.g_dim = 6;
  config.vi_pool = 2;
  config.dlfs.scales = {DlfsScaleConfig{2, 4, 3, 2}};
  ModelParams params = init_params(config, rng);
  Tensor x_rgb = draw_uniform(rng, 0.05, 0.95, {3, 8, 8});
  Tensor x_d = draw_uniform(rng, 0.05, 0.95, {3, 8, 8});
  const int64_t label = rng.uniform_int(0, 1);
  AblationFlags flags;

  auto loss_fn = [&]() {
    ModelForward fw = model_forward(params, config, x_rgb, x_d);
    SampleLosses sl = sample_losses(fw, label, params, config, flags, 1.0, config.lambda1,
                                    config.lambda2, config.lambda3);
    return sl.l_cls + config.lambda1 * sl.l_aux + config.lambda2 * sl.l_vi +
           config.lambda3 * sl.l_cm;
  };
  ModelForward fw = model_forward(params, config, x_rgb, x_d);
  SampleLosses sl = sample_losses(fw, label, params, config, flags, 1.0, config.lambda1,
                                  config.lambda2, config.lambda3);
  ParamGrads grads = model_backward(fw.cache, params, config, sl.grads);
  accumulate_grads(grads, sl.vi_param_grads);
  for (auto& [name, p] : params.params)
    merge_fd(fd, fd_check_tensor_sampled(p.value, grads.at(name), loss_fn, 3, rng));
}

}  // namespace

std::vector<GradcheckReport> gradcheck_suite(int seed_count) {
  std::vector<GradcheckReport> reports;
  if (seed_count <= 0) return reports;
  Suite suite{reports, seed_count};
  suite.run("conv2d", kTolLinear, check_conv2d);
  suite.run("fully_connected", kTolLinear, check_fc);
  suite.run("global_avg_pool", kTolLinear, check_gap);
  suite.run("max_pool", kTolLinear, check_max_pool);
  suite.run("softmax2d", kTolDefault, check_softmax2d);
  suite.run("cross_entropy", kTolDefault, check_cross_entropy);
  suite.run("group_channel_pool", kTolLinear, check_group_pool);
  suite.run("soft_keypoints", kTolDefault, check_soft_keypoints);
  suite.run("bilinear_sample", kTolDefault, check_bilinear);
  suite.run("dlfs_composite", kTolDefault, check_dlfs);
  suite.run("vi_loss", kTolDefault, check_vi_loss);
  suite.run("multimodal_corr_loss", kTolDefault, check_corr_loss);
  suite.run("triplet_corr_loss", kTolDefault, check_triplet_loss);
  suite.run("aux_ce_loss", kTolLinear, check_aux_ce);
  suite.run("full_model", kTolModel, check_full_model);
  return reports;
}

bool all_passed(const std::vector<GradcheckReport>& reports) {
  for (const GradcheckReport& r : reports)
    if (!r.pass) return false;
  return true;
}

std::string format_report_line(const GradcheckReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-4s %-22s max_rel_err %.3e  tol %.0e  checked %d  skipped %d",
                r.pass ? "PASS" : "FAIL", r.component.c_str(), r.max_rel_err, r.tolerance,
                r.checked, r.skipped);
  return buf;
}

}  // namespace dlfs
