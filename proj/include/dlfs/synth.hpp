#pragma once

#include <string>
#include <vector>

#include "dlfs/rng.hpp"
#include "dlfs/tensor.hpp"

namespace dlfs {

// Synthetic aligned two-modality scenes. Class identity is a signature set
// of 2-3 objects, each a (shape, color) binding rendered identically into
// both modalities (collinear per-pixel colors, so raw cross-modal cosine is
// 1 on objects), over per-modality independent smooth background noise with
// complementary channel profiles (so background cosine stays low). Classes
// come in binding twins that share the same shapes and the same colors and
// differ only in which color goes with which shape, so pooled presence
// statistics cannot separate them; localized features can.

struct SceneExample {
  Tensor x_rgb, x_d;  // [3,H,W], values in [0,1]
  int64_t label = 0;
  std::vector<std::pair<int, int>> object_centers;  // (row, col), all objects
  int object_radius = 0;                            // shared by the scene's objects
};

struct SynthConfig {
  int image_size = 32;
  int num_classes = 6;
  int radius_min = 2;
  int radius_max = 3;
  int max_distractors = 2;  // extra non-signature objects per scene
  double noise_amp = 1.0;   // 0 leaves the background at exactly 0.5
  void validate() const;
};

// One object: a shape index bound to a palette color index.
struct ObjectSpec {
  int shape = 0;
  int color = 0;
  bool operator==(const ObjectSpec&) const = default;
};

// The signature set defining a class; classes 2k and 2k+1 are binding twins.
std::vector<ObjectSpec> class_signature(int class_id, int num_classes);

SceneExample gen_scene(int64_t class_id, Rng& rng, const SynthConfig& config);

struct ManifestSample {
  std::string split;  // train | val | test
  int64_t label = 0;
  std::vector<std::pair<int, int>> centers;
  std::string rgb_file, d_file;  // relative to the manifest directory
};

struct DatasetManifest {
  int num_classes = 0;
  uint64_t seed = 0;
  int version = 1;
  int radius = 0;  // maximum object radius (used by the localization metric)
  int image_size = 0;
  double noise_amp = 1.0;
  int64_t train_count = 0, val_count = 0, test_count = 0;
  std::vector<ManifestSample> samples;
  std::string dir;  // directory the manifest was written to / read from
};

struct GenDatasetConfig {
  SynthConfig synth;
  int64_t train_pool = 300;  // pre-split training samples; 20% become val
  int64_t test_count = 120;
};

// Writes sample tensors and the manifest under out_dir; fully determined by
// (config, seed). Per-sample RNG substreams derive from the sample index, so
// generation order never changes the content.
DatasetManifest gen_dataset(const GenDatasetConfig& config, uint64_t seed,
                            const std::string& out_dir);

DatasetManifest read_manifest(const std::string& manifest_path);
std::string manifest_path(const std::string& dir);

struct Dataset {
  DatasetManifest manifest;
  std::vector<SceneExample> train, val, test;
  const std::vector<SceneExample>& split(const std::string& name) const;
};

Dataset load_dataset(const std::string& manifest_path);

}  // namespace dlfs
