#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dlfs/gradcheck.hpp"
#include "dlfs/image_io.hpp"
#include "dlfs/losses.hpp"
#include "dlfs/run_config.hpp"
#include "dlfs/synth.hpp"
#include "dlfs/tensor_io.hpp"
#include "dlfs/train.hpp"

namespace {

using namespace dlfs;

struct GenOpts {
  std::string out;
  int classes = 6;
  uint64_t seed = 7;
  int64_t train_pool = 300;
  int64_t test_count = 120;
  int image_size = 32;
  int radius_min = 2;
  int radius_max = 3;
  int distractors = 2;
  double noise = 1.0;
};

int run_gen(const GenOpts& o) {
  GenDatasetConfig cfg;
  cfg.synth.image_size = o.image_size;
  cfg.synth.num_classes = o.classes;
  cfg.synth.radius_min = o.radius_min;
  cfg.synth.radius_max = o.radius_max;
  cfg.synth.max_distractors = o.distractors;
  cfg.synth.noise_amp = o.noise;
  cfg.train_pool = o.train_pool;
  cfg.test_count = o.test_count;
  DatasetManifest m = gen_dataset(cfg, o.seed, o.out);
  std::printf("%s\n", manifest_path(o.out).c_str());
  std::printf("train=%lld val=%lld test=%lld classes=%d\n", static_cast<long long>(m.train_count),
              static_cast<long long>(m.val_count), static_cast<long long>(m.test_count),
              m.num_classes);
  return 0;
}

struct TrainOpts {
  std::string config_file, data, out, resume;
  std::vector<std::string> ablate;
  int64_t seed = -1;
  int epochs = -1;
  double lr = -1.0;
  int batch = -1;
  int threads = -1;
  int keypoints = -1;  // >=0 replaces the pyramid with one scale (0 = none)
};

RunConfig resolve_config(const TrainOpts& o) {
  RunConfig cfg = o.config_file.empty() ? RunConfig{} : load_run_config(o.config_file);
  if (o.seed >= 0) {
    cfg.train.seed = static_cast<uint64_t>(o.seed);
    cfg.model.seed = cfg.train.seed;
  }
  if (o.epochs >= 0) cfg.train.epochs = o.epochs;
  if (o.lr >= 0.0) cfg.train.lr = o.lr;
  if (o.batch >= 0) cfg.train.batch_size = o.batch;
  if (o.threads >= 0) cfg.train.threads = o.threads;
  if (o.keypoints == 0) {
    cfg.model.dlfs.scales.clear();
  } else if (o.keypoints > 0) {
    const int channels = cfg.model.dlfs.scales.empty()
                             ? 32
                             : cfg.model.dlfs.scales.front().conv_channels;
    DlfsScaleConfig sc;
    sc.keypoints = o.keypoints;
    sc.conv_channels = channels;
    cfg.model.dlfs.scales = {sc};
  }
  for (const std::string& a : o.ablate) {
    if (a == "local")
      cfg.train.ablation.use_local = false;
    else if (a == "aux")
      cfg.train.ablation.use_aux = false;
    else if (a == "vi")
      cfg.train.ablation.use_vi = false;
    else if (a == "corr")
      cfg.train.ablation.use_corr = false;
    else
      throw BadConfig("unknown ablation " + a);
  }
  return cfg;
}

int run_train(const TrainOpts& o) {
  RunConfig cfg = resolve_config(o);
  Dataset ds = load_dataset(o.data);
  cfg.model.num_classes = ds.manifest.num_classes;
  cfg.model.input_size = ds.manifest.image_size;
  TrainResult r = train(cfg.model, cfg.train, ds, o.out, o.resume);
  std::printf("epochs=%lld best_epoch=%lld best_val_mca=%.9g\n",
              static_cast<long long>(r.state.epoch), static_cast<long long>(r.best_epoch),
              r.best_val_mca);
  std::printf("%s/metrics.csv\n%s/best.ckpt\n", o.out.c_str(), o.out.c_str());
  return 0;
}

struct EvalOpts {
  std::string checkpoint, data, split = "test", config_file, dump;
  int threads = 0;
};

int run_eval(const EvalOpts& o) {
  RunConfig cfg = o.config_file.empty() ? RunConfig{} : load_run_config(o.config_file);
  Dataset ds = load_dataset(o.data);
  cfg.model.num_classes = ds.manifest.num_classes;
  cfg.model.input_size = ds.manifest.image_size;
  const ModelConfig config = cfg.model;
  Rng rng(cfg.train.seed);
  ModelParams params = init_params(config, rng);
  load_checkpoint(o.checkpoint, params);

  const std::vector<SceneExample>& samples = ds.split(o.split);
  MetricsReport r = evaluate(params, config, samples, ds.manifest.radius, o.threads);
  std::printf("split=%s samples=%zu\n", o.split.c_str(), samples.size());
  std::printf("mean_class_accuracy=%.9g\n", r.mean_class_accuracy);
  std::printf("overall_accuracy=%.9g\n", r.overall_accuracy);
  std::printf("kp_hit_rate=%.9g\n", r.kp_hit_rate);
  for (size_t c = 0; c < r.per_class_recall.size(); ++c)
    std::printf("class %zu recall=%.9g n=%lld\n", c, r.per_class_recall[c],
                static_cast<long long>(r.per_class_count[c]));

  if (!o.dump.empty()) {
    std::ofstream os(o.dump, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + o.dump);
    for (size_t i = 0; i < samples.size(); ++i) {
      ModelForward fw = model_forward(params, config, samples[i].x_rgb, samples[i].x_d);
      os << i << '\t' << samples[i].label << '\t' << max_all(fw.logits).index << '\n';
    }
  }
  return 0;
}

int run_gradcheck(int seeds) {
  std::vector<GradcheckReport> reports = gradcheck_suite(seeds);
  for (const GradcheckReport& r : reports) std::printf("%s\n", format_report_line(r).c_str());
  std::printf("%zu checks, %s\n", reports.size(), all_passed(reports) ? "all passed" : "FAILURES");
  return all_passed(reports) ? 0 : 1;
}

struct VizOpts {
  std::string checkpoint, out, mode = "corr", config_file;
  std::vector<std::string> sample;  // rgb.dten d.dten
};

int run_viz(const VizOpts& o) {
  RunConfig cfg = o.config_file.empty() ? RunConfig{} : load_run_config(o.config_file);
  Tensor x_rgb = load_tensor(o.sample[0]);
  Tensor x_d = load_tensor(o.sample[1]);
  cfg.model.input_size = static_cast<int>(x_rgb.shape()[1]);
  cfg.model.num_classes = static_cast<int>(checkpoint_record_shape(o.checkpoint, "fuse.b")[0]);
  const ModelConfig config = cfg.model;
  Rng rng(cfg.train.seed);
  ModelParams params = init_params(config, rng);
  load_checkpoint(o.checkpoint, params);
  std::filesystem::create_directories(o.out);

  ModelForward fw = model_forward(params, config, x_rgb, x_d);
  if (o.mode == "corr") {
    const std::string path = o.out + "/corr.pgm";
    render_correlation_pgm(path, pixelwise_correlation_map(fw.f_rgb, fw.f_d));
    std::printf("%s\n", path.c_str());
  } else if (o.mode == "keypoints") {
    const std::string rgb_path = o.out + "/keypoints_rgb.ppm";
    const std::string d_path = o.out + "/keypoints_d.ppm";
    render_keypoint_overlay_ppm(rgb_path, x_rgb, fw.keypoints, config);
    render_keypoint_overlay_ppm(d_path, x_d, fw.keypoints, config);
    std::printf("%s\n%s\n", rgb_path.c_str(), d_path.c_str());
  } else {
    throw BadConfig("unknown viz mode " + o.mode);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-modality scene classification with differentiable local feature selection"};
  app.require_subcommand(1);

  GenOpts gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic two-modality dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--classes", gen.classes, "Number of classes");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--train", gen.train_pool, "Training pool size (20% becomes validation)");
  gen_cmd->add_option("--test", gen.test_count, "Test sample count");
  gen_cmd->add_option("--image-size", gen.image_size, "Square image size");
  gen_cmd->add_option("--radius-min", gen.radius_min, "Minimum object radius");
  gen_cmd->add_option("--radius-max", gen.radius_max, "Maximum object radius");
  gen_cmd->add_option("--distractors", gen.distractors, "Maximum distractor objects per scene");
  gen_cmd->add_option("--noise", gen.noise, "Background noise amplitude in [0,1]");

  TrainOpts tr;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model on a generated dataset");
  train_cmd->add_option("--config", tr.config_file, "Run configuration file (key=value lines)");
  train_cmd->add_option("--data", tr.data, "Dataset manifest path")->required();
  train_cmd->add_option("--out", tr.out, "Output directory for checkpoints and metrics")
      ->required();
  train_cmd->add_option("--ablate", tr.ablate, "Disable a component: local|aux|vi|corr")
      ->allow_extra_args(false);
  train_cmd->add_option("--resume", tr.resume, "Resume from a last.ckpt");
  train_cmd->add_option("--seed", tr.seed, "Override the run seed");
  train_cmd->add_option("--epochs", tr.epochs, "Override the epoch count");
  train_cmd->add_option("--lr", tr.lr, "Override the learning rate");
  train_cmd->add_option("--batch", tr.batch, "Override the batch size");
  train_cmd->add_option("--threads", tr.threads, "Worker threads (0 = auto)");
  train_cmd->add_option("--keypoints", tr.keypoints,
                        "Replace the pyramid with one scale of K keypoints (0 disables the "
                        "local branch)");

  EvalOpts ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset manifest path")->required();
  eval_cmd->add_option("--split", ev.split, "train | val | test");
  eval_cmd->add_option("--config", ev.config_file, "Run configuration file");
  eval_cmd->add_option("--dump", ev.dump, "Write per-sample predictions to this file");
  eval_cmd->add_option("--threads", ev.threads, "Worker threads (0 = auto)");

  int seeds = 20;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck",
                                        "Verify every analytic gradient against finite "
                                        "differences");
  gc_cmd->add_option("--seeds", seeds, "Random configurations per component");

  VizOpts vz;
  CLI::App* viz_cmd = app.add_subcommand("viz", "Render correlation maps or keypoint overlays");
  viz_cmd->add_option("--checkpoint", vz.checkpoint, "Checkpoint file")->required();
  viz_cmd->add_option("--sample", vz.sample, "Sample tensor files: rgb.dten d.dten")
      ->expected(2)
      ->required();
  viz_cmd->add_option("--out", vz.out, "Output directory")->required();
  viz_cmd->add_option("--mode", vz.mode, "corr | keypoints");
  viz_cmd->add_option("--config", vz.config_file, "Run configuration file");

  try {
    app.parse(argc, argv);
    if (*gen_cmd) return run_gen(gen);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*gc_cmd) return run_gradcheck(seeds);
    if (*viz_cmd) return run_viz(vz);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const BadConfig& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const BadParam& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  }
}
