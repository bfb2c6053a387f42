#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "dlfs/fd_check.hpp"
#include "dlfs/losses.hpp"
#include "dlfs/rng.hpp"

using namespace dlfs;

namespace {

double golden_min(const std::function<double(double)>& f, double a, double b) {
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  for (int it = 0; it < 200; ++it) {
    if (f(c) < f(d))
      b = d;
    else
      a = c;
    c = b - gr * (b - a);
    d = a + gr * (b - a);
  }
  return 0.5 * (a + b);
}

}  // namespace

TEST_CASE("vi loss analytic values") {
  // zero conv weights, bias = one-hot(label), sigma = 1: perfect
  // reconstruction, log 1 = 0 everywhere
  const int n = 3, k = 2, s = 2;
  Tensor m = Tensor::full({k, 4, 4}, 0.3);
  Tensor w({n, k, s, s});
  Tensor b({n});
  b[1] = 1.0;
  Tensor ls({n});
  auto [loss, cache] = vi_loss(m, 1, s, w, b, ls);
  CHECK(loss == doctest::Approx(0.0).epsilon(1e-12));

  // sigma = 1, U = 0, N = 2, label 0: 0.5*(1^2 + 0^2)
  Tensor w2({2, k, s, s});
  Tensor b2({2});
  Tensor ls2({2});
  auto [l2, c2] = vi_loss(m, 0, s, w2, b2, ls2);
  CHECK(l2 == doctest::Approx(0.5).epsilon(1e-12));

  CHECK_THROWS_AS(vi_loss(m, 3, s, w, b, ls), LabelOutOfRange);
}

TEST_CASE("vi loss with unit sigma is half squared error") {
  Rng rng(50);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 4, k = 3, s = 2;
    Tensor m = draw_normal(rng, 0.0, 1.0, {k, 5, 5});
    Tensor w = draw_normal(rng, 0.0, 0.5, {n, k, s, s});
    Tensor b = draw_normal(rng, 0.0, 0.5, {n});
    Tensor ls({n});  // log sigma = 0 -> sigma = 1
    const int64_t label = rng.uniform_int(0, n - 1);
    auto [loss, cache] = vi_loss(m, label, s, w, b, ls);
    double want = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double err = (i == label ? 1.0 : 0.0) - cache.u[i];
      want += 0.5 * err * err;
    }
    CHECK(loss == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("vi loss per-coordinate optimal sigma is the absolute error") {
  // for fixed U the sigma minimizing log(s) + e^2/(2 s^2) is |e|,
  // confirmed by golden-section search per coordinate
  Rng rng(51);
  for (int trial = 0; trial < 25; ++trial) {
    const double e = rng.uniform(0.05, 2.0);
    auto f = [&](double sigma) { return std::log(sigma) + e * e / (2.0 * sigma * sigma); };
    const double argmin = golden_min(f, 1e-3, 10.0);
    CHECK(argmin == doctest::Approx(std::fabs(e)).epsilon(1e-6));
  }
}

TEST_CASE("vi loss backward matches finite differences") {
  Rng rng(52);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 4, k = 3, s = 2;
    Tensor m = draw_normal(rng, 0.0, 1.0, {k, 5, 5});
    Tensor w = draw_normal(rng, 0.0, 0.5, {n, k, s, s});
    Tensor b = draw_normal(rng, 0.0, 0.5, {n});
    Tensor ls = draw_normal(rng, 0.0, 0.3, {n});
    const int64_t label = rng.uniform_int(0, n - 1);

    auto [loss, cache] = vi_loss(m, label, s, w, b, ls);
    ViLossGrads g = vi_loss_backward(cache, w, ls);
    auto loss_fn = [&]() { return vi_loss(m, label, s, w, b, ls).first; };
    CHECK(fd_check_tensor_sampled(w, g.grad_conv_w, loss_fn, 15, rng).max_rel_err < 1e-4);
    CHECK(fd_check_tensor_sampled(b, g.grad_conv_b, loss_fn, n, rng).max_rel_err < 1e-4);
    CHECK(fd_check_tensor_sampled(ls, g.grad_log_sigma, loss_fn, n, rng).max_rel_err < 1e-4);
    CHECK(fd_check_tensor_sampled(m, g.grad_m, loss_fn, 15, rng).max_rel_err < 1e-4);
  }
}

TEST_CASE("pixelwise correlation map") {
  Rng rng(53);
  Tensor f = draw_uniform(rng, 0.2, 1.0, {4, 3, 5});
  Tensor p = pixelwise_correlation_map(f, f);
  for (int64_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(1.0).epsilon(1e-12));

  Tensor nf = scale(f, -1.0);
  Tensor pn = pixelwise_correlation_map(f, nf);
  for (int64_t i = 0; i < pn.size(); ++i) CHECK(pn[i] == doctest::Approx(-1.0).epsilon(1e-12));

  // random maps vs per-pixel explicit-loop oracle
  Tensor a = draw_normal(rng, 0.0, 1.0, {4, 3, 5});
  Tensor b = draw_normal(rng, 0.0, 1.0, {4, 3, 5});
  Tensor got = pixelwise_correlation_map(a, b);
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 5; ++j) {
      double ab = 0.0, aa = 0.0, bb = 0.0;
      for (int64_t c = 0; c < 4; ++c) {
        ab += a[(c * 3 + i) * 5 + j] * b[(c * 3 + i) * 5 + j];
        aa += a[(c * 3 + i) * 5 + j] * a[(c * 3 + i) * 5 + j];
        bb += b[(c * 3 + i) * 5 + j] * b[(c * 3 + i) * 5 + j];
      }
      CHECK(got[i * 5 + j] == doctest::Approx(ab / std::sqrt(aa * bb)).epsilon(1e-12));
    }

  CHECK_THROWS_AS(pixelwise_correlation_map(a, draw_normal(rng, 0.0, 1.0, {4, 5, 3})),
                  ShapeMismatch);
}

TEST_CASE("multimodal correlation loss") {
  Rng rng(54);
  Tensor e = draw_uniform(rng, 0.2, 1.0, {3, 6});
  auto [zero_loss, c0] = multimodal_corr_loss(e, e);
  CHECK(zero_loss == doctest::Approx(0.0).epsilon(1e-12));

  auto [two_loss, c2] = multimodal_corr_loss(e, scale(e, -1.0));
  CHECK(two_loss == doctest::Approx(2.0).epsilon(1e-12));

  // range property
  for (int trial = 0; trial < 100; ++trial) {
    Tensor a = draw_normal(rng, 0.0, 1.0, {4, 5});
    Tensor b = draw_normal(rng, 0.0, 1.0, {4, 5});
    auto [l, c] = multimodal_corr_loss(a, b);
    CHECK(l >= 0.0);
    CHECK(l <= 2.0);
  }

  // degenerate rows contribute no gradient
  Tensor dz({2, 3});
  Tensor dn = draw_normal(rng, 0.0, 1.0, {2, 3});
  auto [dl, dc] = multimodal_corr_loss(dz, dn);
  CorrLossGrads dg = multimodal_corr_loss_backward(dc);
  CHECK(sum_all(abs_elem(dg.grad_e_rgb)) == 0.0);
  CHECK(sum_all(abs_elem(dg.grad_e_d)) == 0.0);

  // finite differences
  for (int trial = 0; trial < 5; ++trial) {
    Tensor a = draw_normal(rng, 0.0, 1.0, {4, 5});
    Tensor b = draw_normal(rng, 0.0, 1.0, {4, 5});
    auto [l, cache] = multimodal_corr_loss(a, b);
    CorrLossGrads g = multimodal_corr_loss_backward(cache);
    auto loss_fn = [&]() { return multimodal_corr_loss(a, b).first; };
    CHECK(fd_check_tensor_sampled(a, g.grad_e_rgb, loss_fn, 12, rng).max_rel_err < 1e-4);
    CHECK(fd_check_tensor_sampled(b, g.grad_e_d, loss_fn, 12, rng).max_rel_err < 1e-4);
  }
}

TEST_CASE("triplet correlation loss") {
  Rng rng(55);
  Tensor a = draw_uniform(rng, 0.2, 1.0, {3, 4});

  // ideal triplet: positive identical, negative opposite -> hinge inactive
  auto [l0, c0] = triplet_corr_loss(a, a, scale(a, -1.0), 1.0);
  CHECK(l0 == 0.0);
  TripletLossGrads g0 = triplet_corr_loss_backward(c0);
  CHECK(sum_all(abs_elem(g0.grad_a)) == 0.0);

  // indistinguishable positive and negative -> exactly the margin
  Tensor p = draw_normal(rng, 0.0, 1.0, {3, 4});
  auto [lm, cm] = triplet_corr_loss(a, p, p, 0.75);
  CHECK(lm == doctest::Approx(0.75).epsilon(1e-12));

  // range property: loss in [0, 2 + margin]
  for (int trial = 0; trial < 100; ++trial) {
    Tensor ta = draw_normal(rng, 0.0, 1.0, {3, 4});
    Tensor tp = draw_normal(rng, 0.0, 1.0, {3, 4});
    Tensor tn = draw_normal(rng, 0.0, 1.0, {3, 4});
    auto [l, c] = triplet_corr_loss(ta, tp, tn, 1.0);
    CHECK(l >= 0.0);
    CHECK(l <= 3.0 + 1e-12);
  }

  CHECK_THROWS_AS(triplet_corr_loss(a, p, p, -0.1), BadParam);

  // finite differences on active triplets
  int done = 0;
  while (done < 5) {
    Tensor ta = draw_normal(rng, 0.0, 1.0, {3, 4});
    Tensor tp = draw_normal(rng, 0.0, 1.0, {3, 4});
    Tensor tn = draw_normal(rng, 0.0, 1.0, {3, 4});
    auto [l, cache] = triplet_corr_loss(ta, tp, tn, 1.0);
    if (l < 0.05) continue;  // stay away from the hinge
    ++done;
    TripletLossGrads g = triplet_corr_loss_backward(cache);
    auto loss_fn = [&]() { return triplet_corr_loss(ta, tp, tn, 1.0).first; };
    CHECK(fd_check_tensor_sampled(ta, g.grad_a, loss_fn, 12, rng).max_rel_err < 1e-4);
    CHECK(fd_check_tensor_sampled(tp, g.grad_p, loss_fn, 12, rng).max_rel_err < 1e-4);
    CHECK(fd_check_tensor_sampled(tn, g.grad_n, loss_fn, 12, rng).max_rel_err < 1e-4);
  }
}

TEST_CASE("auxiliary cross entropy") {
  Tensor uniform({4});
  auto [l, c] = aux_ce_loss(uniform, uniform, 1);
  CHECK(l == doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-12));

  Tensor hot({4});
  hot[2] = 1000.0;
  auto [l2, c2] = aux_ce_loss(hot, hot, 2);
  CHECK(l2 == doctest::Approx(0.0));

  Rng rng(56);
  Tensor ga = draw_normal(rng, 0.0, 2.0, {5});
  Tensor gb = draw_normal(rng, 0.0, 2.0, {5});
  auto [l3, cache] = aux_ce_loss(ga, gb, 3);
  AuxCeGrads g = aux_ce_loss_backward(cache);
  auto loss_fn = [&]() { return aux_ce_loss(ga, gb, 3).first; };
  CHECK(fd_check_tensor_sampled(ga, g.grad_rgb, loss_fn, 5, rng).max_rel_err < 1e-5);
  CHECK(fd_check_tensor_sampled(gb, g.grad_d, loss_fn, 5, rng).max_rel_err < 1e-5);
}

TEST_CASE("total loss weighting") {
  LossBundle zero = total_loss(0, 0, 0, 0, 1.0, 0.1, 0.1);
  CHECK(zero.total == 0.0);

  LossBundle b = total_loss(1, 1, 1, 1, 1.0, 0.1, 0.1);
  CHECK(b.total == doctest::Approx(2.2).epsilon(1e-12));

  LossBundle ablate = total_loss(0.4, 0.3, 7.0, 9.0, 1.0, 0.0, 0.0);
  CHECK(ablate.total == doctest::Approx(0.7).epsilon(1e-12));

  // exact linearity in each component
  Rng rng(57);
  for (int trial = 0; trial < 20; ++trial) {
    const double cls = rng.uniform(0, 2), aux = rng.uniform(0, 2);
    const double vi = rng.uniform(0, 2), cr = rng.uniform(0, 2);
    LossBundle t = total_loss(cls, aux, vi, cr, 1.0, 0.1, 0.1);
    CHECK(std::fabs(t.total - (cls + 1.0 * aux + 0.1 * vi + 0.1 * cr)) < 1e-12);
  }
}
