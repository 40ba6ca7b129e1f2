#pragma once

// Training with AdamW on the four-map MSE loss, single-pass evaluation under
// the rectangle success metric, cross-validation and the skip ablation.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tfgrasp/dataset.hpp"
#include "tfgrasp/geometry.hpp"
#include "tfgrasp/model.hpp"

namespace tfgrasp {

struct TrainConfig {
  int epochs = 300;
  Index batch_size = 8;
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  std::uint64_t seed = 0;
  bool use_skips = true;
  InputMode mode = InputMode::kRgbd;
  Index embed_dim = 16;
  // Random quarter turns and zoom per (epoch, sample) when set.
  bool augment = false;

  // Throws ConfigError for epochs < 1, batch_size < 1, negative rates.
  void validate() const;
  ModelConfig model_config(Index resolution = kDefaultResolution) const;
};

// Mean of the per-map MSE over {Q, cos, sin, W}, averaged over the batch.
// pred and target share a shape [B, 4, H, W] or [4, H, W].
template <typename Scalar>
Tensor<Scalar> grasp_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target);
double grasp_loss(const GraspMaps& pred, const GraspMaps& target);

struct TrainResult {
  ModelConfig model;
  ParamSet<float> params;
  // Sample-weighted mean loss per epoch; length == epochs.
  std::vector<double> epoch_loss;
  std::vector<double> step_loss;
};

using EpochCallback = std::function<void(int epoch, double loss)>;

// Throws ContractError on an empty record list.
TrainResult train(std::span<const SampleRecord> records, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// Stacks record images into [B, C, H, W] and targets into [B, 4, H, W].
Tensor<float> stack_images(std::span<const SampleRecord* const> batch);
Tensor<float> stack_targets(std::span<const SampleRecord* const> batch);

struct SampleResult {
  std::size_t index = 0;
  int fold = 0;
  std::string source;
  GraspPose pose;
  // Zero predicted width: no rectangle exists, counted as a failure.
  bool degenerate = false;
  MatchResult match;
};

struct FoldTally {
  int fold = 0;
  std::size_t successes = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(successes) / static_cast<double>(total) : 0.0; }
};

struct EvalReport {
  std::vector<FoldTally> folds;
  std::vector<SampleResult> samples;
  double mean_inference_ms = 0;

  std::size_t successes() const;
  std::size_t total() const;
  double accuracy() const;
};

// Scores one predicted map stack against the truth rectangles.
SampleResult score_prediction(const GraspMaps& predicted, std::span<const GraspRect> truths);

// One forward pass per record. Throws DataError for a record without
// rectangles and ConfigError when image channels differ from the model's.
EvalReport evaluate(std::span<const SampleRecord> records, const ParamSet<float>& params, const ModelConfig& model,
                    int fold = 0);

// Appends the folds and samples of `part` (inference time is averaged by
// sample count).
void merge_report(EvalReport& into, const EvalReport& part);

struct CrossValidation {
  Splits splits;
  std::vector<EvalReport> reports;                // per fold
  std::vector<std::vector<double>> epoch_losses;  // per fold
  EvalReport combined;
  double mean_accuracy() const;
  // Per-epoch loss averaged over folds.
  std::vector<double> mean_epoch_loss() const;
};

CrossValidation cross_validate(std::span<const SampleRecord> records, SplitScheme scheme, int folds,
                               const TrainConfig& config, const EpochCallback& on_epoch = {});

struct SkipAblation {
  CrossValidation with_skips;
  CrossValidation without_skips;
  // Mean over epochs of the fold-averaged training loss.
  double with_loss() const;
  double without_loss() const;
};

SkipAblation ablate_skips(std::span<const SampleRecord> records, SplitScheme scheme, int folds,
                          const TrainConfig& config);

// Human-readable lines, one per sample plus fold and overall totals.
std::string format_report(const EvalReport& report);
// key=value lines: accuracy, successes, total, folds, fold<k>_accuracy,
// fold<k>_total, mean_inference_ms (last).
std::string format_summary(const EvalReport& report);

}  // namespace tfgrasp
