#pragma once

#include <map>
#include <string>

#include "dlfs/keypoint_select.hpp"
#include "dlfs/layers.hpp"
#include "dlfs/optim.hpp"
#include "dlfs/rng.hpp"

namespace dlfs {

// Two-branch network: a small per-modality conv backbone, a global branch
// (global average pool -> FC feature -> FC logits) per modality, the local
// feature selection pyramid, and one fusion FC over the concatenation of
// global features and selected local features.
struct ModelConfig {
  int input_size = 32;
  std::vector<int> channels = {16, 32, 32};  // backbone blocks; every block
                                             // except the last halves H,W
  int num_classes = 6;
  int g_dim = 64;   // global feature width entering the fusion
  int vi_pool = 2;  // S of the mutual-information head
  DlfsConfig dlfs = {{DlfsScaleConfig{16, 32, 3, 2}, DlfsScaleConfig{4, 32, 3, 2}}};
  double lambda1 = 1.0, lambda2 = 0.1, lambda3 = 0.1;
  uint64_t seed = 0;

  int backbone_blocks() const { return static_cast<int>(channels.size()); }
  int total_stride() const;    // input pixels per final-map pixel
  int64_t feature_size() const;  // final backbone map H (= W)
  int64_t feature_channels() const { return channels.empty() ? 0 : channels.back(); }
  int64_t fusion_dim() const;
  bool local_enabled() const { return dlfs.enabled(); }
  void validate() const;  // throws BadConfig
};

struct ModelParams {
  std::map<std::string, ParamTensor> params;  // sorted paths, deterministic order

  ParamTensor& at(const std::string& path);
  const ParamTensor& at(const std::string& path) const;
  const Tensor& value(const std::string& path) const { return at(path).value; }
  void zero_grads();
};

// Xavier-uniform weights, zero biases, zero log-sigma; bit-reproducible for
// a given rng state.
ModelParams init_params(const ModelConfig& config, Rng& rng);

struct ModalityCache {
  std::vector<Conv2dCache> conv;
  std::vector<ReluCache> relu;
  std::vector<MaxPoolCache> pool;  // one per block except the last
  GapCache gap;
  FcCache fc1;
  ReluCache fc1_relu;
  FcCache logits;
};

struct ModelCache {
  ModalityCache rgb, d;
  DlfsCache dlfs;
  FcCache fuse;
  bool valid = false;
};

struct ModelForward {
  Tensor logits;                       // [N]
  Tensor g_rgb_logits, g_d_logits;     // auxiliary per-modality logits
  SelectedFeatures selected;           // empty when local branch disabled
  std::vector<KeypointSet> keypoints;  // per scale
  Tensor f_rgb, f_d;                   // final backbone maps
  ModelCache cache;
};

ModelForward model_forward(const ModelParams& params, const ModelConfig& config,
                           const Tensor& x_rgb, const Tensor& x_d);

// Upstream gradients entering the backward pass. Empty tensors mean zero.
struct LossGrads {
  Tensor logits;
  Tensor g_rgb_logits, g_d_logits;
  Tensor e_rgb, e_d;            // extra gradient on selected features
  std::vector<Tensor> grouped;  // extra gradient on each scale's response maps
};

using ParamGrads = std::map<std::string, Tensor>;

ParamGrads model_backward(ModelCache& cache, const ModelParams& params, const ModelConfig& config,
                          const LossGrads& lg);

// Sums `incr` into `into` (matching keys; missing keys are inserted).
void accumulate_grads(ParamGrads& into, const ParamGrads& incr);
// Applies accumulated gradients into the params' grad buffers.
void apply_grads(ModelParams& params, const ParamGrads& grads, double scale_factor = 1.0);

std::vector<DlfsScaleParams> dlfs_param_views(const ModelParams& params, const ModelConfig& config);

}  // namespace dlfs
