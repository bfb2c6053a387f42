#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dlfs/train.hpp"

using namespace dlfs;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.input_size = 16;
  c.channels = {4, 8};
  c.num_classes = 3;
  c.g_dim = 6;
  c.vi_pool = 2;
  c.dlfs.scales = {DlfsScaleConfig{2, 4, 3, 2}};
  return c;
}

TrainConfig tiny_train(uint64_t seed, int epochs) {
  TrainConfig t;
  t.lr = 1e-3;
  t.batch_size = 8;
  t.epochs = epochs;
  t.seed = seed;
  t.threads = 2;
  return t;
}

// one shared tiny dataset on disk for the whole test binary
const std::string& tiny_dataset_dir() {
  static std::string dir = [] {
    GenDatasetConfig cfg;
    cfg.synth.image_size = 16;
    cfg.synth.num_classes = 3;
    cfg.synth.radius_min = 2;
    cfg.synth.radius_max = 3;
    cfg.synth.max_distractors = 0;
    cfg.train_pool = 30;
    cfg.test_count = 12;
    std::string d = "train_test_data";
    std::filesystem::remove_all(d);
    gen_dataset(cfg, 17, d);
    return d;
  }();
  return dir;
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig t;
  t.lr = 1e-4;
  CHECK(lr_at_epoch(t, 0) == 1e-4);
  CHECK(lr_at_epoch(t, 79) == 1e-4);
  CHECK(lr_at_epoch(t, 80) == 1e-4 * 0.9);
  CHECK(lr_at_epoch(t, 159) == 1e-4 * 0.9);
  CHECK(lr_at_epoch(t, 160) == doctest::Approx(1e-4 * 0.81).epsilon(1e-15));
}

TEST_CASE("train config validation") {
  TrainConfig t;
  t.lr = -1.0;
  CHECK_THROWS_AS(t.validate(), BadConfig);
  t = TrainConfig{};
  t.batch_size = 2;  // triplets need three samples
  CHECK_THROWS_AS(t.validate(), BadConfig);
  t.ablation.use_corr = false;
  CHECK_NOTHROW(t.validate());
}

TEST_CASE("keypoint hit rate geometry") {
  ModelConfig config = tiny_model();  // feature map 8x8, stride 2
  KeypointSet set;
  // a keypoint exactly on an object center: input pixel (6, 10) maps back to
  // feature pixel (3, 5)
  set.x = {norm_coord_from_index(5, 8)};
  set.y = {norm_coord_from_index(3, 8)};
  CHECK(keypoint_hit_rate({set}, config, {{6, 10}}, 2.0) == 1.0);

  // all keypoints at corners, all centers in the middle
  KeypointSet corners;
  corners.x = {-1.0, 1.0, -1.0, 1.0};
  corners.y = {-1.0, -1.0, 1.0, 1.0};
  CHECK(keypoint_hit_rate({corners}, config, {{7, 7}, {8, 8}}, 3.0) == 0.0);

  CHECK_THROWS_AS(keypoint_hit_rate({set}, config, {}, 2.0), BadConfig);
}

TEST_CASE("evaluate computes mean-class accuracy as mean of recalls") {
  ModelConfig config = tiny_model();
  Rng rng(3);
  ModelParams params = init_params(config, rng);
  // force a constant prediction: zero fusion weights, bias peaked at class 0
  ParamTensor& fw = params.at("fuse.w");
  for (int64_t i = 0; i < fw.value.size(); ++i) fw.value[i] = 0.0;
  params.at("fuse.b").value = Tensor({3}, {10.0, 0.0, 0.0});

  Dataset ds = load_dataset(manifest_path(tiny_dataset_dir()));
  MetricsReport r = evaluate(params, config, ds.test, ds.manifest.radius);
  CHECK(r.per_class_recall[0] == 1.0);
  CHECK(r.per_class_recall[1] == 0.0);
  CHECK(r.per_class_recall[2] == 0.0);
  CHECK(r.mean_class_accuracy == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(r.overall_accuracy == doctest::Approx(4.0 / 12.0).epsilon(1e-12));

  CHECK_THROWS_AS(evaluate(params, config, {}, 3), EmptySplit);
}

TEST_CASE("chance-level accuracy for random weights") {
  // random-weight models on a balanced 3-class split stay near 1/3
  Dataset ds = load_dataset(manifest_path(tiny_dataset_dir()));
  ModelConfig config = tiny_model();
  double acc = 0.0;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    ModelParams params = init_params(config, rng);
    acc += evaluate(params, config, ds.test, ds.manifest.radius).mean_class_accuracy;
  }
  acc /= 5.0;
  CHECK(acc > 1.0 / 3.0 - 0.15);
  CHECK(acc < 1.0 / 3.0 + 0.15);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  Dataset ds = load_dataset(manifest_path(tiny_dataset_dir()));
  ModelConfig config = tiny_model();
  TrainConfig tc = tiny_train(5, 2);
  tc.lr = 0.0;
  TrainResult r = train(config, tc, ds, "");
  Rng rng(5);
  ModelParams fresh = init_params(config, rng);
  for (const auto& [name, p] : fresh.params)
    CHECK(r.params.at(name).value.values() == p.value.values());
}

TEST_CASE("training runs deterministically and writes artifacts") {
  Dataset ds = load_dataset(manifest_path(tiny_dataset_dir()));
  ModelConfig config = tiny_model();
  const std::string d1 = "train_test_run1", d2 = "train_test_run2";
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);

  TrainResult r1 = train(config, tiny_train(7, 3), ds, d1);
  TrainResult r2 = train(config, tiny_train(7, 3), ds, d2);
  CHECK(read_bytes(d1 + "/metrics.csv") == read_bytes(d2 + "/metrics.csv"));
  CHECK(read_bytes(d1 + "/last.ckpt") == read_bytes(d2 + "/last.ckpt"));
  CHECK(read_bytes(d1 + "/best.ckpt") == read_bytes(d2 + "/best.ckpt"));
  CHECK(r1.rows.size() == 3);
  CHECK(r1.rows[0].epoch == 0);
  CHECK(r1.best_epoch >= 0);

  // thread count never changes the numbers
  TrainConfig tc1 = tiny_train(7, 3);
  tc1.threads = 1;
  const std::string d3 = "train_test_run3";
  std::filesystem::remove_all(d3);
  train(config, tc1, ds, d3);
  CHECK(read_bytes(d1 + "/metrics.csv") == read_bytes(d3 + "/metrics.csv"));
  CHECK(read_bytes(d1 + "/last.ckpt") == read_bytes(d3 + "/last.ckpt"));

  // CSV layout: header plus one row per epoch
  std::ifstream csv(d1 + "/metrics.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "epoch,lr,l_cls,l_aux,l_vi,l_c,total,val_mca,kp_hit_rate");
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3);

  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
  std::filesystem::remove_all(d3);
}

TEST_CASE("checkpoint resume replays the uninterrupted run exactly") {
  Dataset ds = load_dataset(manifest_path(tiny_dataset_dir()));
  ModelConfig config = tiny_model();
  const std::string straight = "train_test_straight", half = "train_test_half";
  std::filesystem::remove_all(straight);
  std::filesystem::remove_all(half);

  TrainResult full = train(config, tiny_train(11, 4), ds, straight);
  TrainResult first = train(config, tiny_train(11, 2), ds, half);
  TrainResult resumed = train(config, tiny_train(11, 4), ds, half, half + "/last.ckpt");

  CHECK(resumed.rows.size() == 2);
  CHECK(resumed.rows[0].epoch == 2);
  CHECK(read_bytes(straight + "/last.ckpt") == read_bytes(half + "/last.ckpt"));
  CHECK(read_bytes(straight + "/best.ckpt") == read_bytes(half + "/best.ckpt"));
  CHECK(full.rows.back().total == resumed.rows.back().total);
  CHECK(full.rows.back().val_mca == resumed.rows.back().val_mca);

  std::filesystem::remove_all(straight);
  std::filesystem::remove_all(half);
}

TEST_CASE("ablation flags zero the matching loss terms and gradients") {
  Dataset ds = load_dataset(manifest_path(tiny_dataset_dir()));
  ModelConfig config = tiny_model();

  TrainConfig no_local = tiny_train(13, 2);
  no_local.ablation.use_local = false;
  TrainResult r = train(config, no_local, ds, "");
  for (const EpochRow& row : r.rows) {
    CHECK(row.l_vi == 0.0);
    CHECK(row.l_c == 0.0);
    CHECK(row.l_aux > 0.0);
  }

  TrainConfig no_vi = tiny_train(13, 1);
  no_vi.ablation.use_vi = false;
  TrainResult rv = train(config, no_vi, ds, "");
  CHECK(rv.rows[0].l_vi == 0.0);
  CHECK(rv.rows[0].l_c > 0.0);
  // the untouched vi head still has zero adam state
  CHECK(sum_all(abs_elem(rv.params.at("vi.conv.w").adam_m)) == 0.0);

  TrainConfig no_corr = tiny_train(13, 1);
  no_corr.ablation.use_corr = false;
  TrainResult rc = train(config, no_corr, ds, "");
  CHECK(rc.rows[0].l_c == 0.0);
  CHECK(rc.rows[0].l_vi > 0.0);

  TrainConfig no_aux = tiny_train(13, 1);
  no_aux.ablation.use_aux = false;
  TrainResult ra = train(config, no_aux, ds, "");
  CHECK(ra.rows[0].l_aux == 0.0);
  CHECK(sum_all(abs_elem(ra.params.at("rgb.glob.logits.w").adam_m)) == 0.0);
}

TEST_CASE("training reduces the loss on the tiny task") {
  Dataset ds = load_dataset(manifest_path(tiny_dataset_dir()));
  ModelConfig config = tiny_model();
  TrainConfig tc = tiny_train(19, 8);
  TrainResult r = train(config, tc, ds, "");
  CHECK(r.rows.back().total < r.rows.front().total);
}
