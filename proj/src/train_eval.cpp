#include "tfgrasp/train_eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "tfgrasp/adamw.hpp"
#include "tfgrasp/errors.hpp"
#include "tfgrasp/ops.hpp"
#include "tfgrasp/random.hpp"

namespace tfgrasp {
namespace {

// Seed streams used by train().
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kAugmentStream = 2;

Tensor<float> stack(std::span<const SampleRecord* const> batch, const std::function<Tensor<float>(const SampleRecord&)>& get) {
  if (batch.empty()) throw ContractError("cannot stack an empty batch");
  const Tensor<float> first = get(*batch.front());
  Shape shape{static_cast<Index>(batch.size())};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  std::vector<float> values;
  values.reserve(static_cast<std::size_t>(shape_numel(shape)));
  for (const SampleRecord* r : batch) {
    const Tensor<float> t = get(*r);
    if (t.shape() != first.shape()) {
      throw ShapeError("batch mixes shapes " + shape_string(first.shape()) + " and " + shape_string(t.shape()));
    }
    values.insert(values.end(), t.data().begin(), t.data().end());
  }
  return Tensor<float>(std::move(shape), std::move(values));
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1, got " + std::to_string(epochs));
  if (batch_size < 1) throw ConfigError("batch size must be at least 1, got " + std::to_string(batch_size));
  if (!(learning_rate >= 0)) throw ConfigError("learning rate must be non-negative");
  if (!(weight_decay >= 0)) throw ConfigError("weight decay must be non-negative");
  if (embed_dim < 1) throw ConfigError("embed dim must be positive");
}

ModelConfig TrainConfig::model_config(Index resolution) const {
  ModelConfig m;
  m.in_channels = input_channels(mode);
  m.embed_dim = embed_dim;
  m.resolution = resolution;
  m.use_skips = use_skips;
  m.validate();
  return m;
}

template <typename Scalar>
Tensor<Scalar> grasp_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("loss: prediction " + shape_string(pred.shape()) + " vs target " + shape_string(target.shape()));
  }
  if (pred.rank() < 3 || pred.dim(-3) != 4) {
    throw ShapeError("loss expects [B, 4, H, W] or [4, H, W], got " + shape_string(pred.shape()));
  }
  // Each map and sample has the same element count, so the mean over all
  // elements equals the mean of per-map MSEs averaged over the batch.
  return mse_loss(pred, target);
}

double grasp_loss(const GraspMaps& pred, const GraspMaps& target) {
  return grasp_loss(maps_to_tensor(pred), maps_to_tensor(target)).item();
}

Tensor<float> stack_images(std::span<const SampleRecord* const> batch) {
  return stack(batch, [](const SampleRecord& r) { return r.image; });
}

Tensor<float> stack_targets(std::span<const SampleRecord* const> batch) {
  return stack(batch, [](const SampleRecord& r) { return maps_to_tensor(r.targets); });
}

TrainResult train(std::span<const SampleRecord> records, const TrainConfig& config, const EpochCallback& on_epoch) {
  if (records.empty()) throw ContractError("training needs at least one record");
  config.validate();
  const Index resolution = records.front().image.dim(-1);
  TrainResult result{config.model_config(resolution), init_model<float>(config.model_config(resolution), config.seed),
                     {}, {}};
  for (const auto& r : records) {
    if (r.image.dim(0) != result.model.in_channels) {
      throw ConfigError("record " + r.source + " has " + std::to_string(r.image.dim(0)) + " channels, model expects " +
                        std::to_string(result.model.in_channels));
    }
  }

  AdamWOptions options;
  options.learning_rate = config.learning_rate;
  options.weight_decay = config.weight_decay;
  auto& tensors = result.params.tensors();
  AdamWState<float> state = make_adamw_state<float>(tensors, options);

  std::vector<std::size_t> order(records.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(config.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    double epoch_total = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<SampleRecord> augmented;
      std::vector<const SampleRecord*> batch;
      if (config.augment) {
        for (std::size_t i = start; i < end; ++i) {
          const std::uint64_t seed = mix_seed(config.seed, kAugmentStream, static_cast<std::uint64_t>(epoch) << 32 | order[i]);
          augmented.push_back(augment(records[order[i]], seed));
        }
        for (const auto& r : augmented) batch.push_back(&r);
      } else {
        for (std::size_t i = start; i < end; ++i) batch.push_back(&records[order[i]]);
      }
      const Tensor<float> images = stack_images(batch);
      const Tensor<float> targets = stack_targets(batch);

      Tape<float> tape;
      double step_loss;
      {
        TapeScope<float> scope(tape);
        const Tensor<float> pred = forward(images, result.params, result.model);
        const Tensor<float> loss = grasp_loss(pred, targets);
        step_loss = loss.item();
        tape.backward(loss);
      }
      adamw_step<float>(tensors, state);
      tape.clear();
      result.params.zero_grad();
      result.step_loss.push_back(step_loss);
      epoch_total += step_loss * static_cast<double>(batch.size());
    }
    const double epoch_loss = epoch_total / static_cast<double>(records.size());
    result.epoch_loss.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch + 1, epoch_loss);
  }
  for (auto& t : tensors) t.drop_grad();
  return result;
}

std::size_t EvalReport::successes() const {
  std::size_t n = 0;
  for (const auto& f : folds) n += f.successes;
  return n;
}

std::size_t EvalReport::total() const {
  std::size_t n = 0;
  for (const auto& f : folds) n += f.total;
  return n;
}

double EvalReport::accuracy() const {
  const std::size_t t = total();
  return t ? static_cast<double>(successes()) / static_cast<double>(t) : 0.0;
}

SampleResult score_prediction(const GraspMaps& predicted, std::span<const GraspRect> truths) {
  if (truths.empty()) throw DataError("sample has no ground-truth rectangles");
  SampleResult out;
  out.pose = extract_pose(predicted);
  if (!(out.pose.width_px > 0)) {
    out.degenerate = true;
    return out;
  }
  out.match = match_grasp(pose_to_rect(out.pose), truths);
  return out;
}

EvalReport evaluate(std::span<const SampleRecord> records, const ParamSet<float>& params, const ModelConfig& model,
                    int fold) {
  EvalReport report;
  FoldTally tally;
  tally.fold = fold;
  double total_ms = 0;
  NoGradScope<float> no_grad;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const SampleRecord& r = records[i];
    if (r.pos_rects.empty()) throw DataError(r.source + ": sample has no ground-truth rectangles");
    if (r.image.dim(0) != model.in_channels) {
      throw ConfigError("data has " + std::to_string(r.image.dim(0)) + " channels but the checkpoint expects " +
                        std::to_string(model.in_channels));
    }
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor<float> maps = forward(r.image, params, model);
    const auto t1 = std::chrono::steady_clock::now();
    total_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
    SampleResult s = score_prediction(maps_from_tensor(maps), r.pos_rects);
    s.index = i;
    s.fold = fold;
    s.source = r.source;
    tally.successes += s.match.success ? 1 : 0;
    ++tally.total;
    report.samples.push_back(std::move(s));
  }
  report.folds.push_back(tally);
  report.mean_inference_ms = records.empty() ? 0.0 : total_ms / static_cast<double>(records.size());
  return report;
}

void merge_report(EvalReport& into, const EvalReport& part) {
  const double n_into = static_cast<double>(into.samples.size());
  const double n_part = static_cast<double>(part.samples.size());
  if (n_into + n_part > 0) {
    into.mean_inference_ms = (into.mean_inference_ms * n_into + part.mean_inference_ms * n_part) / (n_into + n_part);
  }
  into.folds.insert(into.folds.end(), part.folds.begin(), part.folds.end());
  into.samples.insert(into.samples.end(), part.samples.begin(), part.samples.end());
}

double CrossValidation::mean_accuracy() const {
  if (reports.empty()) return 0.0;
  double sum = 0;
  for (const auto& r : reports) sum += r.accuracy();
  return sum / static_cast<double>(reports.size());
}

std::vector<double> CrossValidation::mean_epoch_loss() const {
  if (epoch_losses.empty()) return {};
  std::vector<double> mean(epoch_losses.front().size(), 0.0);
  for (const auto& fold : epoch_losses) {
    for (std::size_t e = 0; e < mean.size(); ++e) mean[e] += fold[e];
  }
  for (auto& v : mean) v /= static_cast<double>(epoch_losses.size());
  return mean;
}

CrossValidation cross_validate(std::span<const SampleRecord> records, SplitScheme scheme, int folds,
                               const TrainConfig& config, const EpochCallback& on_epoch) {
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.object_id);
  CrossValidation cv;
  cv.splits = make_splits(ids, scheme, folds, config.seed);
  for (int k = 0; k < folds; ++k) {
    std::vector<SampleRecord> train_set, test_set;
    for (std::size_t i = 0; i < records.size(); ++i) {
      (cv.splits.fold_of[i] == k ? test_set : train_set).push_back(records[i]);
    }
    TrainResult trained = train(train_set, config, on_epoch);
    EvalReport report = evaluate(test_set, trained.params, trained.model, k);
    for (std::size_t j = 0; j < report.samples.size(); ++j) report.samples[j].index = cv.splits.members[k][j];
    merge_report(cv.combined, report);
    cv.reports.push_back(std::move(report));
    cv.epoch_losses.push_back(std::move(trained.epoch_loss));
  }
  return cv;
}

double SkipAblation::with_loss() const {
  const auto l = with_skips.mean_epoch_loss();
  return l.empty() ? 0.0 : std::accumulate(l.begin(), l.end(), 0.0) / static_cast<double>(l.size());
}

double SkipAblation::without_loss() const {
  const auto l = without_skips.mean_epoch_loss();
  return l.empty() ? 0.0 : std::accumulate(l.begin(), l.end(), 0.0) / static_cast<double>(l.size());
}

SkipAblation ablate_skips(std::span<const SampleRecord> records, SplitScheme scheme, int folds,
                          const TrainConfig& config) {
  TrainConfig on = config, off = config;
  on.use_skips = true;
  off.use_skips = false;
  return {cross_validate(records, scheme, folds, on), cross_validate(records, scheme, folds, off)};
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  for (const auto& s : report.samples) {
    os << "sample " << s.index << " fold=" << s.fold << " source=" << s.source << " pose=(" << s.pose.col << ","
       << s.pose.row << ") theta=" << format_double(s.pose.theta) << " width_px=" << format_double(s.pose.width_px)
       << " quality=" << format_double(s.pose.quality);
    if (s.degenerate) {
      os << " degenerate";
    } else {
      os << " matched=" << s.match.matched << " jaccard=" << format_double(s.match.jaccard)
         << " angle_deg=" << format_double(s.match.angle_error * 180.0 / 3.14159265358979323846);
    }
    os << (s.match.success ? " success\n" : " failure\n");
  }
  for (const auto& f : report.folds) {
    os << "fold " << f.fold << ": " << f.successes << "/" << f.total << " = " << format_double(f.accuracy()) << "\n";
  }
  os << "overall: " << report.successes() << "/" << report.total() << " = " << format_double(report.accuracy())
     << "\n";
  return os.str();
}

std::string format_summary(const EvalReport& report) {
  std::ostringstream os;
  os << "accuracy=" << format_double(report.accuracy()) << "\n";
  os << "successes=" << report.successes() << "\n";
  os << "total=" << report.total() << "\n";
  os << "folds=" << report.folds.size() << "\n";
  for (const auto& f : report.folds) {
    os << "fold" << f.fold << "_accuracy=" << format_double(f.accuracy()) << "\n";
    os << "fold" << f.fold << "_total=" << f.total << "\n";
  }
  os << "mean_inference_ms=" << format_double(report.mean_inference_ms) << "\n";
  return os.str();
}

template Tensor<float> grasp_loss(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> grasp_loss(const Tensor<double>&, const Tensor<double>&);

}  // namespace tfgrasp
