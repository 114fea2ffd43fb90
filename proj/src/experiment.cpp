#include "ilaprop/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>

#include "ilaprop/io.hpp"
#include "ilaprop/metrics.hpp"
#include "ilaprop/ops.hpp"
#include "ilaprop/plot.hpp"

namespace ilaprop {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// Held-out sequences come from a different stream of the same data seed.
constexpr std::size_t kEvalStream = 1'000'000;

std::optional<std::size_t> task_index(const ModelConfig& model, TaskKind kind) {
  for (std::size_t t = 0; t < model.tasks.size(); ++t) {
    if (model.tasks[t].kind == kind) return t;
  }
  return std::nullopt;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

}  // namespace

Dataset make_dataset(const ExperimentConfig& config) {
  const auto params = to_synthetic_params(config);
  Dataset d;
  for (std::size_t i = 0; i < config.train_sequences; ++i) {
    d.train.push_back(generate_sequence(params, sequence_seed(config.data_seed, i)));
  }
  for (std::size_t i = 0; i < config.eval_sequences; ++i) {
    d.eval.push_back(generate_sequence(params, sequence_seed(config.data_seed, kEvalStream + i)));
  }
  return d;
}

TrainBatch make_batch(std::span<const SyntheticSequence> sequences,
                      std::span<const std::size_t> indices, const ModelConfig& model) {
  if (indices.empty()) throw std::invalid_argument("make_batch: no sequences selected");
  const auto& first = sequences[indices[0]];
  const std::size_t frames = first.frames.size();
  const std::size_t plane = first.height * first.width;
  const std::size_t batch = indices.size();
  TrainBatch out;
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> pixels;
    pixels.reserve(batch * 3 * plane);
    std::vector<TaskTarget> targets(model.tasks.size());
    for (std::size_t idx : indices) {
      const auto& s = sequences[idx];
      if (s.frames.size() != frames || s.height * s.width != plane) {
        throw std::invalid_argument("make_batch: sequences differ in length or frame size");
      }
      const auto px = s.frames[t].data();
      pixels.insert(pixels.end(), px.begin(), px.end());
      for (std::size_t k = 0; k < model.tasks.size(); ++k) {
        auto& tg = targets[k];
        if (model.tasks[k].kind == TaskKind::segmentation) {
          tg.classes.insert(tg.classes.end(), s.seg_labels[t].begin(), s.seg_labels[t].end());
        } else {
          tg.depth.insert(tg.depth.end(), s.depth_maps[t].begin(), s.depth_maps[t].end());
          tg.depth_mask.resize(tg.depth.size(), 1);
        }
      }
    }
    out.frames.push_back(Tensor::from_data({batch, 3, first.height, first.width}, std::move(pixels)));
    out.targets.push_back(std::move(targets));
  }
  return out;
}

EvalSummary evaluate(const SlowFastModel& model, std::span<const SyntheticSequence> sequences,
                     std::size_t keyframe_interval, flops::CountingMode mode) {
  const auto& cfg = model.config();
  const auto seg = task_index(cfg, TaskKind::segmentation);
  const auto dep = task_index(cfg, TaskKind::depth);
  std::vector<AnnotatedClip> clips;
  for (const auto& s : sequences) clips.push_back({s.frames});

  const MetricsFn metrics = [&](const FrameOutput& out, std::size_t ci) {
    const auto& s = sequences[ci];
    std::vector<double> v(4, kNaN);
    if (seg) {
      const auto pred = argmax_labels(out.predictions[*seg]);
      const auto& gt = s.seg_labels.back();
      v[0] = miou(pred, gt, cfg.tasks[*seg].out_channels);
      v[1] = pixel_accuracy(pred, gt);
    }
    if (dep) {
      const std::vector<std::uint8_t> mask(s.depth_maps.back().size(), 1);
      const auto e = depth_errors(out.predictions[*dep].data(), s.depth_maps.back(), mask);
      v[2] = e.abs_err;
      v[3] = e.rel_err;
    }
    return v;
  };
  const auto result = eval_offset_averaged(model, clips, keyframe_interval, metrics, mode);

  EvalSummary summary;
  for (std::size_t d = 0; d < result.per_offset.size(); ++d) {
    const auto& r = result.per_offset[d];
    summary.per_offset.push_back({d, r[0], r[1], r[2], r[3], result.gflops_per_offset[d]});
  }
  summary.mean = {0, result.mean[0], result.mean[1], result.mean[2], result.mean[3],
                  result.mean_gflops};
  if (keyframe_interval == 1) {
    summary.non_keyframe_miou = summary.mean.miou;
  } else {
    double acc = 0.0;
    for (std::size_t d = 1; d < keyframe_interval; ++d) acc += summary.per_offset[d].miou;
    summary.non_keyframe_miou = acc / static_cast<double>(keyframe_interval - 1);
  }
  return summary;
}

double feature_gap(const SlowFastModel& model, std::span<const SyntheticSequence> sequences) {
  if (sequences.empty()) throw std::invalid_argument("feature_gap: no sequences");
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& s : sequences) {
    const Tensor slow = model.encode(s.frames[0], Branch::Slow);
    const Tensor fast = model.encode(s.frames[0], Branch::Fast);
    total += mean(abs(sub(slow, fast))).item();
  }
  return total / static_cast<double>(sequences.size());
}

void write_metrics_csv(const std::string& path, const EvalSummary& eval) {
  auto out = open_out(path);
  out << "offset,miou,pixel_acc,depth_abs,depth_rel,gflops_per_frame\n";
  auto row = [&](const std::string& label, const EvalRow& r) {
    out << label << ',' << fmt(r.miou) << ',' << fmt(r.pixel_acc) << ',' << fmt(r.depth_abs)
        << ',' << fmt(100.0 * r.depth_rel) << ',' << fmt(r.gflops) << '\n';
  };
  for (const auto& r : eval.per_offset) row(std::to_string(r.offset), r);
  row("mean", eval.mean);
}

void write_train_log_csv(const std::string& path, const std::vector<TrainLogRow>& log,
                         const ModelConfig& model) {
  auto out = open_out(path);
  out << "step";
  for (const auto& t : model.tasks) out << ',' << t.name << "_loss";
  out << ",l1,adv,total,d_acc,wall_ms\n";
  for (const auto& r : log) {
    out << r.step;
    for (double v : r.loss.task) out << ',' << fmt(v);
    out << ',' << fmt(r.loss.l1) << ',' << fmt(r.loss.adversarial) << ',' << fmt(r.loss.total)
        << ',' << fmt(r.loss.d_accuracy) << ',' << fmt(r.wall_ms) << '\n';
  }
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  validate(config);
  const ModelConfig model_cfg = to_model_config(config);
  const Dataset data = make_dataset(config);

  SlowFastModel model(model_cfg, config.seed);
  std::mt19937_64 rng(sequence_seed(config.seed, 7));
  Discriminator disc(config.channels, config.disc_width, rng);
  const auto model_params = model.parameters();
  const auto disc_params = disc.parameters();
  AdamState model_opt(model_params, to_adam_config(config));
  AdamState disc_opt(disc_params, to_adam_config(config));
  Trainer trainer{model, disc, model_opt, disc_opt, to_loss_config(config),
                  config.keyframe_interval};

  ExperimentResult result;
  result.config = config;
  result.feature_gap_init = feature_gap(model, data.eval);

  std::vector<std::size_t> order(data.train.size());
  std::size_t cursor = order.size();
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<std::size_t> picks;
    while (picks.size() < config.batch_size) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      picks.push_back(order[cursor++]);
    }
    const TrainBatch batch = make_batch(data.train, picks, model_cfg);
    TrainLogRow row;
    row.step = step;
    row.loss = train_step(batch, trainer);
    row.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (options.progress && (step % options.progress_every == 0 || step + 1 == config.steps)) {
      *options.progress << config.name << " step " << step << " total " << fmt(row.loss.total)
                        << " l1 " << fmt(row.loss.l1) << " adv " << fmt(row.loss.adversarial)
                        << " d_acc " << fmt(row.loss.d_accuracy) << '\n';
    }
    result.log.push_back(std::move(row));
  }

  result.eval = evaluate(model, data.eval, config.keyframe_interval);
  result.feature_gap_final = feature_gap(model, data.eval);
  if (!options.write_outputs) return result;

  const std::string dir = resolve_output_dir(config.output_dir);
  ensure_directory(dir);
  result.output_dir = dir;
  const auto path = [&](const char* file) { return (std::filesystem::path(dir) / file).string(); };
  open_out(path("config.txt")) << serialize_config(config);
  write_metrics_csv(path("metrics.csv"), result.eval);
  write_train_log_csv(path("train_log.csv"), result.log, model_cfg);
  {
    auto out = open_out(path("summary.csv"));
    out << "key,value\n";
    out << "mean_miou," << fmt(result.eval.mean.miou) << '\n';
    out << "non_keyframe_miou," << fmt(result.eval.non_keyframe_miou) << '\n';
    out << "mean_gflops_per_frame," << fmt(result.eval.mean.gflops) << '\n';
    out << "feature_gap_init," << fmt(result.feature_gap_init) << '\n';
    out << "feature_gap_final," << fmt(result.feature_gap_final) << '\n';
  }
  save_checkpoint(path("model.ckpt"), model_params);
  save_checkpoint(path("discriminator.ckpt"), disc_params);

  std::vector<Series> losses;
  Series total{"total", {}, {}};
  for (const auto& r : result.log) {
    total.x.push_back(static_cast<double>(r.step));
    total.y.push_back(r.loss.total);
  }
  losses.push_back(std::move(total));
  for (std::size_t k = 0; k < model_cfg.tasks.size(); ++k) {
    Series s{model_cfg.tasks[k].name, {}, {}};
    for (const auto& r : result.log) {
      s.x.push_back(static_cast<double>(r.step));
      s.y.push_back(r.loss.task[k]);
    }
    losses.push_back(std::move(s));
  }
  write_line_plot(path("loss_curve.svg"), {config.name + ": training loss", "step", "loss"},
                  losses);

  std::vector<Series> offsets;
  Series m{"mIoU", {}, {}}, acc{"pixel acc", {}, {}};
  for (const auto& r : result.eval.per_offset) {
    m.x.push_back(static_cast<double>(r.offset));
    m.y.push_back(r.miou);
    acc.x.push_back(static_cast<double>(r.offset));
    acc.y.push_back(r.pixel_acc);
  }
  offsets.push_back(std::move(m));
  offsets.push_back(std::move(acc));
  write_line_plot(path("metric_vs_offset.svg"),
                  {config.name + ": accuracy vs keyframe offset", "offset d", "metric"}, offsets);
  return result;
}

ExperimentResult run_experiment(const std::string& config_path) {
  return run_experiment(load_config(config_path));
}

std::vector<AblationVariant> loss_ablation_variants() {
  return {
      {"ila+l1+adv", {"propagation=ila", "alpha=1", "beta=1"}},
      {"ila+l1", {"propagation=ila", "alpha=1", "beta=0"}},
      {"ila", {"propagation=ila", "alpha=0", "beta=0"}},
      {"no_propagation", {"propagation=none", "alpha=0", "beta=0"}},
  };
}

std::vector<AblationVariant> window_ablation_variants() {
  return {
      {"window3", {"propagation=ila", "window=3"}},
      {"window5", {"propagation=ila", "window=5"}},
      {"window7", {"propagation=ila", "window=7"}},
      {"global", {"propagation=global"}},
  };
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& base,
                                      std::span<const AblationVariant> variants,
                                      std::span<const std::uint64_t> seeds,
                                      const RunOptions& options) {
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    for (auto seed : seeds) {
      ExperimentConfig cfg = base;
      apply_overrides(cfg, v.overrides);
      cfg.seed = seed;
      cfg.name = base.name + "_" + v.name + "_s" + std::to_string(seed);
      cfg.output_dir =
          (std::filesystem::path(base.output_dir) / (v.name + "_s" + std::to_string(seed))).string();
      const auto r = run_experiment(cfg, options);
      rows.push_back({v.name, seed, r.eval, r.feature_gap_init, r.feature_gap_final});
    }
  }
  return rows;
}

void write_ablation_csv(const std::string& path, std::span<const AblationRow> rows) {
  auto out = open_out(path);
  out << "variant,seed,miou,non_keyframe_miou,pixel_acc,depth_abs,depth_rel,gflops_per_frame,"
         "feature_gap_init,feature_gap_final\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << r.seed << ',' << fmt(r.eval.mean.miou) << ','
        << fmt(r.eval.non_keyframe_miou) << ',' << fmt(r.eval.mean.pixel_acc) << ','
        << fmt(r.eval.mean.depth_abs) << ',' << fmt(100.0 * r.eval.mean.depth_rel) << ','
        << fmt(r.eval.mean.gflops) << ',' << fmt(r.feature_gap_init) << ','
        << fmt(r.feature_gap_final) << '\n';
  }
}

std::vector<std::string> dump_task_features(const ExperimentConfig& config,
                                            const std::string& checkpoint_path,
                                            std::size_t sequence_index, std::size_t frame_index,
                                            const std::string& out_dir) {
  validate(config);
  const ModelConfig model_cfg = to_model_config(config);
  SlowFastModel model(model_cfg, config.seed);
  auto params = model.parameters();
  load_checkpoint(checkpoint_path, params);

  const auto params_data = to_synthetic_params(config);
  const auto seq = generate_sequence(
      params_data, sequence_seed(config.data_seed, kEvalStream + sequence_index));
  if (frame_index >= seq.frames.size()) {
    throw std::invalid_argument("frame " + std::to_string(frame_index) + " outside a " +
                                std::to_string(seq.frames.size()) + "-frame sequence");
  }
  NoGradGuard no_grad;
  const std::span<const Tensor> frames(seq.frames.data(), frame_index + 1);
  const auto outputs = model.forward_sequence(frames, config.keyframe_interval);
  const auto& last = outputs.back();

  ensure_directory(out_dir);
  std::vector<std::string> files;
  for (std::size_t t = 0; t < model_cfg.tasks.size(); ++t) {
    const auto& f = last.task_features[t];
    const auto d = f.dims4();
    std::vector<double> channel_mean(d.plane(), 0.0);
    for (std::size_t c = 0; c < d.c; ++c) {
      for (std::size_t p = 0; p < d.plane(); ++p) {
        channel_mean[p] += f.data()[c * d.plane() + p] / static_cast<double>(d.c);
      }
    }
    const std::string file =
        (std::filesystem::path(out_dir) /
         ("task" + std::to_string(t) + "_" + model_cfg.tasks[t].name + "_frame" +
          std::to_string(frame_index) + ".pgm"))
            .string();
    write_pgm(file, d.w, d.h, to_grayscale(channel_mean));
    files.push_back(file);
  }
  return files;
}

}  // namespace ilaprop
