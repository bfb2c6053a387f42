#pragma once

#include "dlfs/layers.hpp"
#include "dlfs/tensor.hpp"

namespace dlfs {

// ---- variational mutual-information loss ----
//
// The part-response maps are max-pooled to SxS, transformed by one SxS
// full-extent convolution into N scalars U, and scored under a Gaussian
// with learnable per-class sigma against the one-hot label:
//   loss = sum_n [ log sigma_n + (L_n - U_n)^2 / (2 sigma_n^2) ]
// sigma is parameterized as exp(log_sigma) so it stays positive; the
// additive constant of the Gaussian NLL is dropped (it has no gradient).
struct ViLossCache {
  MaxPoolCache pool;
  Tensor pooled;  // T [K,S,S]
  Tensor u;       // [N]
  int64_t label = 0;
};
struct ViLossGrads {
  Tensor grad_m;
  Tensor grad_conv_w, grad_conv_b, grad_log_sigma;
};
std::pair<double, ViLossCache> vi_loss(const Tensor& m, int64_t label, int pool_size,
                                       const Tensor& conv_w, const Tensor& conv_b,
                                       const Tensor& log_sigma);
ViLossGrads vi_loss_backward(const ViLossCache& cache, const Tensor& conv_w,
                             const Tensor& log_sigma, double grad_loss = 1.0);

// ---- pixel-wise correlation map (diagnostic, no gradient) ----
// p(i,j) = cosine over channels of the two maps at position (i,j)
Tensor pixelwise_correlation_map(const Tensor& f_rgb, const Tensor& f_d);

// ---- multi-modal correlation loss ----
// 1 - mean per-keypoint cosine between the two modalities' selected rows;
// zero at perfect correlation, 2 at perfect anti-correlation. Degenerate
// (near-zero) rows contribute cosine 0 and no gradient.
struct CorrLossCache {
  Tensor e_rgb, e_d;
};
std::pair<double, CorrLossCache> multimodal_corr_loss(const Tensor& e_rgb, const Tensor& e_d);
struct CorrLossGrads {
  Tensor grad_e_rgb, grad_e_d;
};
CorrLossGrads multimodal_corr_loss_backward(const CorrLossCache& cache, double grad_loss = 1.0);

// ---- triplet correlation loss ----
// max{ rho(anchor,negative) - rho(anchor,positive) + margin, 0 } with rho =
// mean per-row cosine, rewarding same-class correlation; subgradient 0 at
// the hinge.
struct TripletLossCache {
  Tensor e_a, e_p, e_n;
  double margin = 1.0;
  bool active = false;
};
std::pair<double, TripletLossCache> triplet_corr_loss(const Tensor& e_a, const Tensor& e_p,
                                                      const Tensor& e_n, double margin);
struct TripletLossGrads {
  Tensor grad_a, grad_p, grad_n;
};
TripletLossGrads triplet_corr_loss_backward(const TripletLossCache& cache, double grad_loss = 1.0);

// ---- auxiliary cross entropy over both modality heads ----
struct AuxCeCache {
  CrossEntropyCache rgb, d;
};
std::pair<double, AuxCeCache> aux_ce_loss(const Tensor& g_rgb_logits, const Tensor& g_d_logits,
                                          int64_t label);
struct AuxCeGrads {
  Tensor grad_rgb, grad_d;
};
AuxCeGrads aux_ce_loss_backward(const AuxCeCache& cache, double grad_loss = 1.0);

// ---- weighted multi-task objective ----
struct LossBundle {
  double l_cls = 0.0, l_aux = 0.0, l_vi = 0.0, l_c = 0.0;
  double total = 0.0;
  double lambda1 = 1.0, lambda2 = 0.1, lambda3 = 0.1;
};
LossBundle total_loss(double l_cls, double l_aux, double l_vi, double l_c, double lambda1,
                      double lambda2, double lambda3);

}  // namespace dlfs
