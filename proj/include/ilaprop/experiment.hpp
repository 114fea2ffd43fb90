#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ilaprop/config.hpp"
#include "ilaprop/flops.hpp"
#include "ilaprop/network.hpp"
#include "ilaprop/synthetic.hpp"
#include "ilaprop/training.hpp"

namespace ilaprop {

struct Dataset {
  std::vector<SyntheticSequence> train;
  /// Held out: generated from a seed stream disjoint from the training one.
  std::vector<SyntheticSequence> eval;
};

Dataset make_dataset(const ExperimentConfig& config);

/// Folds the chosen sequences into the batch axis, one entry per frame.
TrainBatch make_batch(std::span<const SyntheticSequence> sequences,
                      std::span<const std::size_t> indices, const ModelConfig& model);

struct EvalRow {
  std::size_t offset = 0;
  double miou = 0.0;
  double pixel_acc = 0.0;
  double depth_abs = 0.0;
  double depth_rel = 0.0;  // fraction; written x100 to CSV
  double gflops = 0.0;
};

struct EvalSummary {
  std::vector<EvalRow> per_offset;
  EvalRow mean;
  /// Mean segmentation mIoU over offsets 1..K-1; equals mean.miou when K = 1.
  double non_keyframe_miou = 0.0;
};

/// Offset-averaged evaluation of the last frame of every held-out sequence.
/// Metrics of a disabled task are reported as NaN.
EvalSummary evaluate(const SlowFastModel& model, std::span<const SyntheticSequence> sequences,
                     std::size_t keyframe_interval,
                     flops::CountingMode mode = flops::CountingMode::mac_as_1);

/// Mean |Slow(x) - Fast(x)| of encoder features over the first frame of
/// every sequence.
double feature_gap(const SlowFastModel& model, std::span<const SyntheticSequence> sequences);

struct TrainLogRow {
  std::size_t step = 0;
  LossRecord loss;
  double wall_ms = 0.0;
};

struct ExperimentResult {
  ExperimentConfig config;
  EvalSummary eval;
  std::vector<TrainLogRow> log;
  double feature_gap_init = 0.0;
  double feature_gap_final = 0.0;
  /// Directory that received the artefacts; empty when nothing was written.
  std::string output_dir;
};

struct RunOptions {
  bool write_outputs = true;
  /// Progress lines go here when set.
  std::ostream* progress = nullptr;
  std::size_t progress_every = 50;
};

/// Trains on the synthetic benchmark, evaluates at every keyframe offset and,
/// when enabled, writes metrics.csv, train_log.csv, summary.csv, config.txt,
/// model.ckpt, discriminator.ckpt, loss_curve.svg and metric_vs_offset.svg.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});
ExperimentResult run_experiment(const std::string& config_path);

void write_metrics_csv(const std::string& path, const EvalSummary& eval);
void write_train_log_csv(const std::string& path, const std::vector<TrainLogRow>& log,
                         const ModelConfig& model);

struct AblationVariant {
  std::string name;
  std::vector<std::string> overrides;
};

/// Loss ablation: full objective, L1 only, propagation only, no propagation.
std::vector<AblationVariant> loss_ablation_variants();
/// Window ablation: L in {3, 5, 7} and dense global attention.
std::vector<AblationVariant> window_ablation_variants();

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  EvalSummary eval;
  double feature_gap_init = 0.0;
  double feature_gap_final = 0.0;
};

std::vector<AblationRow> run_ablation(const ExperimentConfig& base,
                                      std::span<const AblationVariant> variants,
                                      std::span<const std::uint64_t> seeds,
                                      const RunOptions& options = {});
void write_ablation_csv(const std::string& path, std::span<const AblationRow> rows);

/// Channel-mean of each task's SE features at `frame_index` of held-out
/// sequence `sequence_index` (periodic schedule from frame 0), written as one
/// min-max normalised PGM per task. Returns the file paths.
std::vector<std::string> dump_task_features(const ExperimentConfig& config,
                                            const std::string& checkpoint_path,
                                            std::size_t sequence_index, std::size_t frame_index,
                                            const std::string& out_dir);

}  // namespace ilaprop
