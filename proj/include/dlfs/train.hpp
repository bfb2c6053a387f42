#pragma once

#include <string>
#include <vector>

#include "dlfs/checkpoint.hpp"
#include "dlfs/losses.hpp"
#include "dlfs/model.hpp"
#include "dlfs/synth.hpp"

namespace dlfs {

struct AblationFlags {
  bool use_local = true;
  bool use_aux = true;
  bool use_vi = true;
  bool use_corr = true;
};

struct TrainConfig {
  double lr = 1e-4;
  double lr_decay = 0.9;
  int decay_epochs = 80;
  int batch_size = 64;
  int epochs = 60;
  double lambda1 = 1.0, lambda2 = 0.1, lambda3 = 0.1;
  double triplet_margin = 1.0;
  uint64_t seed = 0;
  AblationFlags ablation;
  int threads = 0;  // 0 = hardware default; batch fan-out only, results are
                    // identical for any thread count
  void validate() const;
};

// lr0 * decay^floor(epoch / decay_epochs), epochs counted from 0
double lr_at_epoch(const TrainConfig& cfg, int64_t epoch);

// Disabling the local branch removes the selection pyramid entirely (the
// fusion layer shrinks to the global features).
ModelConfig effective_config(ModelConfig config, const AblationFlags& flags);

struct MetricsReport {
  std::vector<double> per_class_recall;
  std::vector<int64_t> per_class_count;
  double mean_class_accuracy = 0.0;  // mean recall over classes with samples
  double overall_accuracy = 0.0;
  double kp_hit_rate = 0.0;
  double l_cls = 0.0, l_aux = 0.0, l_vi = 0.0, l_c = 0.0, total = 0.0;
};

// Fraction of predicted keypoints (all scales) within radius_px of some
// object center, after mapping normalized coordinates through the final
// feature map and the backbone stride back to input pixels.
double keypoint_hit_rate(const std::vector<KeypointSet>& keypoints, const ModelConfig& config,
                         const std::vector<std::pair<int, int>>& centers, double radius_px);

MetricsReport evaluate(const ModelParams& params, const ModelConfig& config,
                       const std::vector<SceneExample>& samples, int manifest_radius,
                       int threads = 0);

struct EpochRow {
  int64_t epoch = 0;
  double lr = 0.0, l_cls = 0.0, l_aux = 0.0, l_vi = 0.0, l_c = 0.0, total = 0.0;
  double val_mca = 0.0, kp_hit_rate = 0.0;
};
std::string metrics_csv_header();
std::string metrics_csv_row(const EpochRow& row);

struct TrainResult {
  ModelParams params;       // after the last epoch
  ModelParams best_params;  // selected by validation mean-class accuracy
  TrainState state;
  double best_val_mca = -1.0;
  int64_t best_epoch = -1;
  std::vector<EpochRow> rows;  // epochs run by this invocation
};

// Runs the training loop over the dataset's train split, evaluating the val
// split after every epoch. Writes metrics.csv, best.ckpt and last.ckpt into
// out_dir (pass "" to skip writing). resume_path restores a last.ckpt and
// continues until train_config.epochs total epochs.
TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  const Dataset& dataset, const std::string& out_dir,
                  const std::string& resume_path = "");

// Per-sample loss terms and upstream gradients, weighted and ready for
// model_backward. Triplet terms join at the batch level.
struct SampleLosses {
  double l_cls = 0.0, l_aux = 0.0, l_vi = 0.0, l_cm = 0.0;
  LossGrads grads;
  ParamGrads vi_param_grads;
};
SampleLosses sample_losses(const ModelForward& fw, int64_t label, const ModelParams& params,
                           const ModelConfig& config, const AblationFlags& flags, double w_cls,
                           double w_aux, double w_vi, double w_corr);

}  // namespace dlfs
