#pragma once

#include <vector>

#include "dlfs/layers.hpp"
#include "dlfs/tensor.hpp"

namespace dlfs {

// Differentiable local feature selection: a 1x1 conv over concatenated
// two-modality maps is group-pooled into K part-response maps, a 2D softmax
// plus spatial expectation turns each map into one keypoint in [-1,1]^2, and
// bilinear sampling reads one feature vector per keypoint out of each
// modality's map. Every step has an analytic backward, so gradients reach
// both the feature maps and the predicted coordinates.
//
// Axis convention throughout: x runs along the width (second map axis, index
// v), y along the height (first map axis, index u). Normalized coordinates
// use the align-corners map xn(v) = 2v/(W-1) - 1, so grid nodes sample
// exactly; a 1-wide or 1-tall axis pins the coordinate to 0 with zero
// gradient.

struct KeypointSet {
  std::vector<double> x;  // K normalized width coordinates in [-1,1]
  std::vector<double> y;  // K normalized height coordinates
  Tensor attn;            // [K,H,W] spatial distributions, each sums to 1
  Tensor grouped;         // [K,H,W] pre-softmax part-response maps
};

struct SelectedFeatures {
  Tensor e_rgb;  // [K_total, C_f]
  Tensor e_d;    // [K_total, C_f]
};

struct DlfsScaleConfig {
  int keypoints = 16;      // K
  int conv_channels = 32;  // C of the 1x1 selection conv; C % K == 0
  // pyramid stage that derives this scale's maps from the previous scale;
  // unused for scale 0
  int pyramid_kernel = 3;
  int pyramid_stride = 2;
};

struct DlfsConfig {
  std::vector<DlfsScaleConfig> scales;

  int total_keypoints() const {
    int n = 0;
    for (const auto& s : scales) n += s.keypoints;
    return n;
  }
  bool enabled() const { return total_keypoints() > 0; }
};

// ---- group channel pooling (1x1 conv + grouped channel sum) ----
struct GroupPoolCache {
  Conv2dCache conv;
  int64_t groups = 0;      // K
  int64_t group_size = 0;  // C/K
};
// f_rgbd [2Cf,H,W], conv_w [C,2Cf,1,1], conv_b [C] -> m [K,H,W] with
// m_j = sum of the j-th block of C/K conv output channels.
std::pair<Tensor, GroupPoolCache> group_channel_pool(const Tensor& f_rgbd, const Tensor& conv_w,
                                                     const Tensor& conv_b, int k);
Conv2dGrads group_channel_pool_backward(const GroupPoolCache& cache, const Tensor& conv_w,
                                        const Tensor& grad_m);

// ---- soft keypoints (2D softmax + spatial expectation) ----
struct SoftKeypointsCache {
  std::vector<Softmax2dCache> softmax;  // one per keypoint
  int64_t h = 0, w = 0;
};
std::pair<KeypointSet, SoftKeypointsCache> soft_keypoints(const Tensor& m);
// grad_x/grad_y are dLoss/dCoord per keypoint; returns grad on m.
Tensor soft_keypoints_backward(const SoftKeypointsCache& cache, const std::vector<double>& grad_x,
                               const std::vector<double>& grad_y);

// ---- bilinear feature sampling ----
struct BilinearCache {
  Tensor f;  // sampled map, kept for the coordinate gradients
  std::vector<double> px, py;  // keypoint positions in pixel units
  bool valid = false;
};
struct BilinearGrads {
  Tensor grad_f;
  std::vector<double> grad_x, grad_y;  // w.r.t. normalized coordinates
};
// f [Cf,H,W] sampled at K normalized coordinates -> e [K,Cf]. Coordinates
// may exceed [-1,1] by at most 1e-9 (clamped); beyond that CoordOutOfRange.
std::pair<Tensor, BilinearCache> bilinear_sample(const Tensor& f, const std::vector<double>& x,
                                                 const std::vector<double>& y);
// The tent-kernel derivative is the piecewise factor {0 outside distance 1,
// +1 when the grid index >= the position, -1 otherwise}; pixel-space
// gradients are rescaled by (W-1)/2 resp. (H-1)/2 into normalized space.
BilinearGrads bilinear_sample_backward(const BilinearCache& cache, const Tensor& grad_e);

// ---- full module over a scale pyramid ----
struct DlfsScaleParams {
  // pyramid stage producing this scale from the previous one (scale 0: null)
  const Tensor* pyr_w_rgb = nullptr;
  const Tensor* pyr_b_rgb = nullptr;
  const Tensor* pyr_w_d = nullptr;
  const Tensor* pyr_b_d = nullptr;
  // 1x1 selection conv over the concatenated maps
  const Tensor* sel_w = nullptr;
  const Tensor* sel_b = nullptr;
};

struct DlfsScaleCache {
  Conv2dCache pyr_rgb, pyr_d;
  GroupPoolCache pool;
  SoftKeypointsCache soft;
  BilinearCache sample_rgb, sample_d;
  int64_t map_h = 0, map_w = 0, cf = 0;
};

struct DlfsCache {
  std::vector<DlfsScaleCache> scales;
  bool valid = false;
};

struct DlfsForwardResult {
  SelectedFeatures selected;
  std::vector<KeypointSet> keypoints;  // per scale
  DlfsCache cache;
};

struct DlfsScaleGrads {
  Tensor pyr_w_rgb, pyr_b_rgb, pyr_w_d, pyr_b_d;
  Tensor sel_w, sel_b;
};

struct DlfsBackwardResult {
  Tensor grad_f_rgb, grad_f_d;  // w.r.t. the scale-0 input maps
  std::vector<DlfsScaleGrads> scale_grads;
};

DlfsForwardResult dlfs_forward(const Tensor& f_rgb, const Tensor& f_d, const DlfsConfig& config,
                               const std::vector<DlfsScaleParams>& params);

// grad_grouped, when nonempty, adds one extra gradient tensor per scale onto
// that scale's part-response maps (the mutual-information loss path).
DlfsBackwardResult dlfs_backward(DlfsCache& cache, const DlfsConfig& config,
                                 const std::vector<DlfsScaleParams>& params,
                                 const Tensor& grad_e_rgb, const Tensor& grad_e_d,
                                 const std::vector<Tensor>& grad_grouped = {});

// Normalized-coordinate helpers shared with the metric code.
double norm_coord_from_index(int64_t v, int64_t extent);  // 2v/(W-1)-1, 0 if W==1
double pixel_from_norm_coord(double xn, int64_t extent);  // (x+1)(W-1)/2, 0 if W==1

}  // namespace dlfs
