#include "dlfs/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <thread>

#include "dlfs/errors.hpp"

namespace dlfs {

void TrainConfig::validate() const {
  // lr == 0 is allowed as a diagnostics mode: the loop runs but no update
  // is applied
  if (!(lr >= 0.0)) throw BadConfig("lr must be >= 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw BadConfig("lr_decay in (0,1]");
  if (decay_epochs < 1) throw BadConfig("decay_epochs >= 1");
  if (epochs < 0) throw BadConfig("epochs >= 0");
  if (batch_size < 1) throw BadConfig("batch_size >= 1");
  if (ablation.use_corr && ablation.use_local && batch_size < 3)
    throw BadConfig("triplet mining needs batch_size >= 3");
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) throw BadConfig("loss weights >= 0");
  if (triplet_margin < 0) throw BadConfig("triplet_margin >= 0");
}

double lr_at_epoch(const TrainConfig& cfg, int64_t epoch) {
  return cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.decay_epochs));
}

ModelConfig effective_config(ModelConfig config, const AblationFlags& flags) {
  if (!flags.use_local) config.dlfs.scales.clear();
  return config;
}

namespace {

int resolve_threads(int threads) {
  if (threads > 0) return threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// static chunking; results are written per index, so the schedule never
// affects the values
void parallel_for(int64_t n, int threads, const std::function<void(int64_t)>& fn) {
  threads = std::min<int64_t>(resolve_threads(threads), n);
  if (threads <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t]() {
      for (int64_t i = t; i < n; i += threads) fn(i);
    });
  for (std::thread& th : pool) th.join();
}

}  // namespace

double keypoint_hit_rate(const std::vector<KeypointSet>& keypoints, const ModelConfig& config,
                         const std::vector<std::pair<int, int>>& centers, double radius_px) {
  if (centers.empty()) throw BadConfig("keypoint_hit_rate needs object centers");
  const int64_t fs = config.feature_size();
  const double stride = static_cast<double>(config.total_stride());
  int64_t total = 0, hits = 0;
  for (const KeypointSet& set : keypoints)
    for (size_t j = 0; j < set.x.size(); ++j) {
      const double col = pixel_from_norm_coord(set.x[j], fs) * stride;
      const double row = pixel_from_norm_coord(set.y[j], fs) * stride;
      ++total;
      for (const auto& [cr, cc] : centers) {
        const double dr = row - cr, dc = col - cc;
        if (std::sqrt(dr * dr + dc * dc) <= radius_px) {
          ++hits;
          break;
        }
      }
    }
  if (total == 0) return 0.0;
  return static_cast<double>(hits) / static_cast<double>(total);
}

SampleLosses sample_losses(const ModelForward& fw, int64_t label, const ModelParams& params,
                           const ModelConfig& config, const AblationFlags& flags, double w_cls,
                           double w_aux, double w_vi, double w_corr) {
  SampleLosses out;
  const bool local = config.local_enabled();

  auto [l_cls, ce_cache] = cross_entropy(fw.logits, label);
  out.l_cls = l_cls;
  out.grads.logits = cross_entropy_backward(ce_cache, w_cls);

  if (flags.use_aux) {
    auto [l_aux, aux_cache] = aux_ce_loss(fw.g_rgb_logits, fw.g_d_logits, label);
    out.l_aux = l_aux;
    AuxCeGrads ag = aux_ce_loss_backward(aux_cache, w_aux);
    out.grads.g_rgb_logits = std::move(ag.grad_rgb);
    out.grads.g_d_logits = std::move(ag.grad_d);
  }

  if (local && flags.use_vi) {
    // the variational head reads the finest scale's response maps
    out.grads.grouped.resize(config.dlfs.scales.size());
    const Tensor& w = params.value("vi.conv.w");
    const Tensor& b = params.value("vi.conv.b");
    const Tensor& ls = params.value("vi.log_sigma");
    auto [lv, vc] = vi_loss(fw.keypoints[0].grouped, label, config.vi_pool, w, b, ls);
    out.l_vi = lv;
    ViLossGrads vg = vi_loss_backward(vc, w, ls, w_vi);
    out.grads.grouped[0] = std::move(vg.grad_m);
    out.vi_param_grads["vi.conv.w"] = std::move(vg.grad_conv_w);
    out.vi_param_grads["vi.conv.b"] = std::move(vg.grad_conv_b);
    out.vi_param_grads["vi.log_sigma"] = std::move(vg.grad_log_sigma);
  }

  if (local && flags.use_corr) {
    // per-scale multi-modal correlation, summed over scales
    const int64_t cf = config.feature_channels();
    out.grads.e_rgb = Tensor({config.dlfs.total_keypoints(), cf});
    out.grads.e_d = Tensor({config.dlfs.total_keypoints(), cf});
    int64_t row = 0;
    for (size_t s = 0; s < config.dlfs.scales.size(); ++s) {
      const int64_t k = config.dlfs.scales[s].keypoints;
      Tensor er({k, cf}), ed({k, cf});
      for (int64_t i = 0; i < k * cf; ++i) {
        er[i] = fw.selected.e_rgb[row * cf + i];
        ed[i] = fw.selected.e_d[row * cf + i];
      }
      auto [lcm, cc] = multimodal_corr_loss(er, ed);
      out.l_cm += lcm;
      CorrLossGrads cg = multimodal_corr_loss_backward(cc, w_corr);
      for (int64_t i = 0; i < k * cf; ++i) {
        out.grads.e_rgb[row * cf + i] += cg.grad_e_rgb[i];
        out.grads.e_d[row * cf + i] += cg.grad_e_d[i];
      }
      row += k;
    }
  }
  return out;
}

namespace {

struct PredictOutcome {
  int64_t predicted = 0;
  double hit_rate = 0.0;
};

int64_t argmax_index(const Tensor& t) {
  return max_all(t).index;
}

// per-scale rows of the concatenated selected features
Tensor scale_rows(const Tensor& e, int64_t row0, int64_t k, int64_t cf) {
  Tensor out({k, cf});
  for (int64_t i = 0; i < k * cf; ++i) out[i] = e[row0 * cf + i];
  return out;
}

}  // namespace

MetricsReport evaluate(const ModelParams& params, const ModelConfig& config,
                       const std::vector<SceneExample>& samples, int manifest_radius,
                       int threads) {
  if (samples.empty()) throw EmptySplit("evaluate on empty split");
  const int64_t n = static_cast<int64_t>(samples.size());
  const double radius_px = manifest_radius + config.total_stride();

  std::vector<PredictOutcome> outcomes(static_cast<size_t>(n));
  parallel_for(n, threads, [&](int64_t i) {
    const SceneExample& ex = samples[static_cast<size_t>(i)];
    ModelForward fw = model_forward(params, config, ex.x_rgb, ex.x_d);
    PredictOutcome& po = outcomes[static_cast<size_t>(i)];
    po.predicted = argmax_index(fw.logits);
    po.hit_rate = (config.local_enabled() && !ex.object_centers.empty())
                      ? keypoint_hit_rate(fw.keypoints, config, ex.object_centers, radius_px)
                      : 0.0;
  });

  MetricsReport report;
  report.per_class_recall.assign(static_cast<size_t>(config.num_classes), 0.0);
  report.per_class_count.assign(static_cast<size_t>(config.num_classes), 0);
  int64_t correct = 0;
  double hit_sum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const SceneExample& ex = samples[static_cast<size_t>(i)];
    report.per_class_count[static_cast<size_t>(ex.label)] += 1;
    if (outcomes[static_cast<size_t>(i)].predicted == ex.label) {
      report.per_class_recall[static_cast<size_t>(ex.label)] += 1.0;
      ++correct;
    }
    hit_sum += outcomes[static_cast<size_t>(i)].hit_rate;
  }
  int defined = 0;
  double recall_sum = 0.0;
  for (int c = 0; c < config.num_classes; ++c) {
    if (report.per_class_count[static_cast<size_t>(c)] == 0) continue;
    report.per_class_recall[static_cast<size_t>(c)] /=
        static_cast<double>(report.per_class_count[static_cast<size_t>(c)]);
    recall_sum += report.per_class_recall[static_cast<size_t>(c)];
    ++defined;
  }
  report.mean_class_accuracy = defined ? recall_sum / defined : 0.0;
  report.overall_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  report.kp_hit_rate = hit_sum / static_cast<double>(n);
  return report;
}

std::string metrics_csv_header() {
  return "epoch,lr,l_cls,l_aux,l_vi,l_c,total,val_mca,kp_hit_rate";
}

std::string metrics_csv_row(const EpochRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                static_cast<long long>(r.epoch), r.lr, r.l_cls, r.l_aux, r.l_vi, r.l_c, r.total,
                r.val_mca, r.kp_hit_rate);
  return buf;
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  const Dataset& dataset, const std::string& out_dir,
                  const std::string& resume_path) {
  train_config.validate();
  const ModelConfig config = effective_config(model_config, train_config.ablation);
  config.validate();
  const AblationFlags& flags = train_config.ablation;
  if (dataset.train.empty()) throw EmptySplit("train split");
  if (dataset.val.empty()) throw EmptySplit("val split");

  Rng rng(train_config.seed);
  TrainResult result;
  result.params = init_params(config, rng);
  TrainState state;
  state.rng_base = rng.base();

  if (!resume_path.empty()) {
    state = load_checkpoint(resume_path, result.params);
    rng = Rng::restore(state.rng_base, state.rng_counter);
    result.best_val_mca = state.best_val_metric;
    result.best_epoch = state.best_epoch;
  }
  result.best_params = result.params;
  if (!resume_path.empty() && result.best_epoch >= 0) {
    // keep the previously selected model if the best epoch predates the resume
    const std::filesystem::path best_path =
        std::filesystem::path(resume_path).parent_path() / "best.ckpt";
    if (std::filesystem::exists(best_path)) load_checkpoint(best_path.string(), result.best_params);
  }

  const int64_t n_train = static_cast<int64_t>(dataset.train.size());
  std::vector<int64_t> order(static_cast<size_t>(n_train));
  for (int64_t i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  std::ofstream csv;
  if (!out_dir.empty()) {
    csv.open(out_dir + "/metrics.csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw IoError("cannot write metrics.csv in " + out_dir);
    csv << metrics_csv_header() << "\n";
  }

  for (int64_t epoch = state.epoch; epoch < train_config.epochs; ++epoch) {
    const double lr = lr_at_epoch(train_config, epoch);
    AdamConfig adam;
    adam.lr = lr;

    // deterministic per-epoch reshuffle from the identity order, so a
    // resumed run sees exactly the batches of an uninterrupted one
    for (int64_t i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;
    for (int64_t i = n_train - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(0, i))]);

    double ep_cls = 0.0, ep_aux = 0.0, ep_vi = 0.0, ep_c = 0.0;
    for (int64_t start = 0; start < n_train; start += train_config.batch_size) {
      const int64_t bsz = std::min<int64_t>(train_config.batch_size, n_train - start);
      const double wb = 1.0 / static_cast<double>(bsz);

      std::vector<ModelForward> forwards(static_cast<size_t>(bsz));
      parallel_for(bsz, train_config.threads, [&](int64_t b) {
        const SceneExample& ex = dataset.train[static_cast<size_t>(order[static_cast<size_t>(start + b)])];
        forwards[static_cast<size_t>(b)] = model_forward(result.params, config, ex.x_rgb, ex.x_d);
      });

      std::vector<SampleLosses> losses(static_cast<size_t>(bsz));
      parallel_for(bsz, train_config.threads, [&](int64_t b) {
        const SceneExample& ex = dataset.train[static_cast<size_t>(order[static_cast<size_t>(start + b)])];
        losses[static_cast<size_t>(b)] =
            sample_losses(forwards[static_cast<size_t>(b)], ex.label, result.params, config, flags,
                          wb, train_config.lambda1 * wb, train_config.lambda2 * wb,
                          train_config.lambda3 * wb);
      });
      double batch_cls = 0.0, batch_aux = 0.0, batch_vi = 0.0, batch_cm = 0.0;
      for (int64_t b = 0; b < bsz; ++b) {
        batch_cls += losses[static_cast<size_t>(b)].l_cls * wb;
        batch_aux += losses[static_cast<size_t>(b)].l_aux * wb;
        batch_vi += losses[static_cast<size_t>(b)].l_vi * wb;
        batch_cm += losses[static_cast<size_t>(b)].l_cm * wb;
      }

      // triplet mining: every sample anchors one random positive and one
      // random negative drawn from the batch
      double batch_trip = 0.0;
      if (config.local_enabled() && flags.use_corr) {
        const int64_t cf = config.feature_channels();
        std::vector<std::pair<int64_t, std::pair<int64_t, int64_t>>> triplets;
        for (int64_t a = 0; a < bsz; ++a) {
          const int64_t la = dataset.train[static_cast<size_t>(order[static_cast<size_t>(start + a)])].label;
          std::vector<int64_t> pos, neg;
          for (int64_t b = 0; b < bsz; ++b) {
            if (b == a) continue;
            const int64_t lb = dataset.train[static_cast<size_t>(order[static_cast<size_t>(start + b)])].label;
            (lb == la ? pos : neg).push_back(b);
          }
          if (pos.empty() || neg.empty()) continue;
          const int64_t p = pos[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(pos.size()) - 1))];
          const int64_t ng = neg[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(neg.size()) - 1))];
          triplets.push_back({a, {p, ng}});
        }
        if (!triplets.empty()) {
          const double wt = train_config.lambda3 / static_cast<double>(triplets.size());
          for (const auto& [a, pn] : triplets) {
            const auto& [p, ng] = pn;
            // per scale and per modality, summed
            int64_t row = 0;
            for (size_t s = 0; s < config.dlfs.scales.size(); ++s) {
              const int64_t k = config.dlfs.scales[s].keypoints;
              for (int mod = 0; mod < 2; ++mod) {
                auto pick = [&](int64_t b) -> const Tensor& {
                  return mod == 0 ? forwards[static_cast<size_t>(b)].selected.e_rgb
                                  : forwards[static_cast<size_t>(b)].selected.e_d;
                };
                Tensor ea = scale_rows(pick(a), row, k, cf);
                Tensor ep = scale_rows(pick(p), row, k, cf);
                Tensor en = scale_rows(pick(ng), row, k, cf);
                auto [lt, tc] = triplet_corr_loss(ea, ep, en, train_config.triplet_margin);
                batch_trip += lt / static_cast<double>(triplets.size());
                TripletLossGrads tg = triplet_corr_loss_backward(tc, wt);
                auto add_rows = [&](int64_t b, const Tensor& g) {
                  Tensor& dst = mod == 0 ? losses[static_cast<size_t>(b)].grads.e_rgb
                                         : losses[static_cast<size_t>(b)].grads.e_d;
                  if (dst.size() == 0)
                    dst = Tensor({config.dlfs.total_keypoints(), cf});
                  for (int64_t i = 0; i < k * cf; ++i) dst[row * cf + i] += g[i];
                };
                add_rows(a, tg.grad_a);
                add_rows(p, tg.grad_p);
                add_rows(ng, tg.grad_n);
              }
              row += k;
            }
          }
        }
      }

      std::vector<ParamGrads> sample_grads(static_cast<size_t>(bsz));
      parallel_for(bsz, train_config.threads, [&](int64_t b) {
        sample_grads[static_cast<size_t>(b)] =
            model_backward(forwards[static_cast<size_t>(b)].cache, result.params, config,
                           losses[static_cast<size_t>(b)].grads);
      });

      result.params.zero_grads();
      ParamGrads reduced;
      for (int64_t b = 0; b < bsz; ++b) {
        accumulate_grads(reduced, sample_grads[static_cast<size_t>(b)]);
        accumulate_grads(reduced, losses[static_cast<size_t>(b)].vi_param_grads);
      }
      apply_grads(result.params, reduced);
      if (lr > 0.0)
        for (auto& [name, p] : result.params.params) adam_step(p, adam);

      const double scale = static_cast<double>(bsz) / static_cast<double>(n_train);
      ep_cls += batch_cls * scale;
      ep_aux += batch_aux * scale;
      ep_vi += batch_vi * scale;
      ep_c += (batch_cm + batch_trip) * scale;
    }

    MetricsReport val = evaluate(result.params, config, dataset.val, dataset.manifest.radius,
                                 train_config.threads);

    EpochRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.l_cls = ep_cls;
    row.l_aux = ep_aux;
    row.l_vi = ep_vi;
    row.l_c = ep_c;
    row.total = total_loss(ep_cls, ep_aux, ep_vi, ep_c, train_config.lambda1,
                           train_config.lambda2, train_config.lambda3)
                    .total;
    row.val_mca = val.mean_class_accuracy;
    row.kp_hit_rate = val.kp_hit_rate;
    result.rows.push_back(row);
    if (csv.is_open()) csv << metrics_csv_row(row) << "\n";

    if (val.mean_class_accuracy > result.best_val_mca) {
      result.best_val_mca = val.mean_class_accuracy;
      result.best_epoch = epoch;
      result.best_params = result.params;
    }

    state.epoch = epoch + 1;
    state.rng_counter = rng.counter();
    state.best_val_metric = result.best_val_mca;
    state.best_epoch = result.best_epoch;
  }

  result.state = state;
  if (!out_dir.empty()) {
    save_checkpoint(out_dir + "/last.ckpt", result.params, state);
    TrainState best_state = state;
    best_state.epoch = result.best_epoch + 1;
    save_checkpoint(out_dir + "/best.ckpt", result.best_params, best_state);
    if (!csv) throw IoError("metrics.csv write failed");
  }
  return result;
}

}  // namespace dlfs
