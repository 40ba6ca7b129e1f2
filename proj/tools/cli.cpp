#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <map>

#include "tfgrasp/errors.hpp"
#include "tfgrasp/image_io.hpp"
#include "tfgrasp/train_eval.hpp"
#include "tfgrasp/verify/suites.hpp"

namespace tfgrasp::cli {
namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// Accepts a dataset directory (reads its index.tsv) or an index file.
std::string index_path(const std::string& data) {
  return std::filesystem::is_directory(data) ? (std::filesystem::path(data) / "index.tsv").string() : data;
}

InputMode mode_for_channels(Index channels) {
  switch (channels) {
    case 1: return InputMode::kDepth;
    case 3: return InputMode::kRgb;
    case 4: return InputMode::kRgbd;
    default: throw ConfigError("checkpoint has " + std::to_string(channels) + " input channels");
  }
}

struct TrainOptions {
  int epochs = 300;
  Index batch = 8;
  double lr = 1e-3;
  double weight_decay = 1e-2;
  std::uint64_t seed = 0;
  Index embed_dim = 16;
  std::string mode = "rgbd";
  std::string skips = "on";
  bool augment = false;
  Index resolution = kDefaultResolution;

  TrainConfig config() const {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch;
    c.learning_rate = lr;
    c.weight_decay = weight_decay;
    c.seed = seed;
    c.embed_dim = embed_dim;
    c.mode = parse_input_mode(mode);
    c.use_skips = skips == "on";
    c.augment = augment;
    c.validate();
    return c;
  }
};

void add_train_options(CLI::App* sub, TrainOptions& o) {
  sub->add_option("--epochs", o.epochs, "Training epochs")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--batch", o.batch, "Batch size")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--lr", o.lr, "AdamW learning rate")->check(CLI::NonNegativeNumber)->capture_default_str();
  sub->add_option("--weight-decay", o.weight_decay, "AdamW decoupled weight decay")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sub->add_option("--seed", o.seed, "Seed for initialization, shuffling and splits")->capture_default_str();
  sub->add_option("--embed-dim", o.embed_dim, "Patch embedding width D")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--mode", o.mode, "Input modality")
      ->check(CLI::IsMember({"d", "rgb", "rgbd"}, CLI::ignore_case))
      ->capture_default_str();
  sub->add_option("--skips", o.skips, "Encoder-decoder skip connections")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  sub->add_flag("--augment", o.augment, "Random quarter turns and zoom per epoch");
  sub->add_option("--resolution", o.resolution, "Model input side in pixels")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

// Inserts "--key=value" for each line of the --config file right after the
// subcommand name, so flags given on the command line (parsed later) win.
std::vector<std::string> expand_config(const std::vector<std::string>& args, const CLI::App& app) {
  std::string path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file argument");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (path.empty()) return args;
  if (rest.empty()) throw UsageError("--config must follow a subcommand");
  const CLI::App* sub = app.get_subcommand_no_throw(rest.front());
  if (sub == nullptr) return args;
  if (sub->get_option_no_throw("--config") == nullptr) throw UsageError("'" + rest.front() + "' takes no --config");
  std::vector<std::pair<std::string, std::string>> entries;
  try {
    entries = parse_config_text(read_file(path));
  } catch (const ConfigError& e) {
    throw UsageError(path + ": " + e.what());
  }
  std::vector<std::string> expanded{rest.front()};
  for (const auto& [key, value] : entries) {
    if (key == "config" || sub->get_option_no_throw("--" + key) == nullptr) {
      throw UsageError("unknown key '" + key + "' in config file " + path + " for '" + rest.front() + "'");
    }
    expanded.push_back("--" + key + "=" + value);
  }
  expanded.insert(expanded.end(), rest.begin() + 1, rest.end());
  return expanded;
}

void print_epoch(std::ostream& out, int epoch, double loss) {
  out << "epoch=" << epoch << " loss=" << fmt(loss) << "\n";
  out.flush();
}

int cmd_synth_gen(std::ostream& out, const std::string& dir, std::size_t count, std::uint64_t seed, Index size) {
  write_scenes(dir, synth_scenes(count, size, seed));
  out << "wrote " << count << " samples to " << (std::filesystem::path(dir) / "index.tsv").string() << "\n";
  return kExitOk;
}

int cmd_train(std::ostream& out, const std::string& data, const std::string& ckpt, const TrainOptions& o) {
  const TrainConfig config = o.config();
  const auto records = load_dataset(index_path(data), config.mode, o.resolution);
  const TrainResult result = train(records, config, [&](int e, double l) { print_epoch(out, e, l); });
  save_checkpoint(ckpt, result.params);
  out << "wrote " << ckpt << " (" << result.params.parameter_count() << " parameters)\n";
  return kExitOk;
}

int cmd_eval(std::ostream& out, const std::string& data, const std::string& ckpt, const std::string& mode_text,
             const std::string& split, int folds, std::uint64_t seed, Index resolution, bool verbose) {
  const ParamSet<float> params = load_checkpoint(ckpt);
  const ModelConfig model = infer_config(params, resolution);
  const InputMode mode = mode_text.empty() ? mode_for_channels(model.in_channels) : parse_input_mode(mode_text);
  const auto records = load_dataset(index_path(data), mode, resolution);
  EvalReport report;
  if (folds < 2) {
    report = evaluate(records, params, model);
  } else {
    std::vector<std::string> ids;
    for (const auto& r : records) ids.push_back(r.object_id);
    const Splits splits = make_splits(ids, parse_split_scheme(split), folds, seed);
    for (int k = 0; k < folds; ++k) {
      const auto& members = splits.members[static_cast<std::size_t>(k)];
      std::vector<SampleRecord> subset;
      for (std::size_t i : members) subset.push_back(records[i]);
      EvalReport part = evaluate(subset, params, model, k);
      for (auto& s : part.samples) s.index = members[s.index];
      merge_report(report, part);
    }
  }
  if (verbose) out << format_report(report);
  out << format_summary(report);
  return kExitOk;
}

int cmd_predict(std::ostream& out, const std::string& ckpt, const std::string& image, const std::string& depth,
                const std::string& prefix, Index resolution) {
  const ParamSet<float> params = load_checkpoint(ckpt);
  const ModelConfig model = infer_config(params, resolution);
  const InputMode mode = mode_for_channels(model.in_channels);
  RawScene scene;
  scene.source = image;
  if (mode == InputMode::kDepth) {
    scene.depth = read_depth(image);
  } else {
    scene.rgb = read_png(image);
    if (mode == InputMode::kRgbd) {
      if (depth.empty()) throw ConfigError("checkpoint expects RGB-D input; pass --depth");
      scene.depth = read_depth(depth);
    }
  }
  const SampleRecord record = make_record(scene, mode, resolution);
  NoGradScope<float> no_grad;
  const GraspMaps maps = maps_from_tensor(forward(record.image, params, model));
  const GraspPose pose = extract_pose(maps);

  MapArray angle(maps.rows(), maps.cols());
  for (Index r = 0; r < maps.rows(); ++r) {
    for (Index c = 0; c < maps.cols(); ++c) {
      const double cs = maps.cos2(r, c), sn = maps.sin2(r, c);
      angle(r, c) = static_cast<float>(cs == 0 && sn == 0 ? 0.0 : decode_angle(cs, sn));
    }
  }
  MapArray width = maps.width * static_cast<float>(kMaxWidthPx);
  write_pgm(prefix + "_q.pgm", maps.quality);
  write_pgm(prefix + "_angle.pgm", angle);
  write_pgm(prefix + "_width.pgm", width);
  const std::string line = std::to_string(pose.col) + " " + std::to_string(pose.row) + " " + fmt(pose.theta) + " " +
                           fmt(pose.width_px) + " " + fmt(pose.quality) + "\n";
  write_file(prefix + "_grasp.txt", line);
  out << line;
  return kExitOk;
}

int cmd_crossval(std::ostream& out, const std::string& data, const std::string& split, int folds,
                 const TrainOptions& o, bool verbose) {
  const TrainConfig config = o.config();
  const auto records = load_dataset(index_path(data), config.mode, o.resolution);
  int fold = -1;
  const CrossValidation cv =
      cross_validate(records, parse_split_scheme(split), folds, config, [&](int e, double l) {
        if (e == 1) ++fold;
        out << "fold=" << fold << " ";
        print_epoch(out, e, l);
      });
  if (verbose) out << format_report(cv.combined);
  out << format_summary(cv.combined);
  out << "mean_fold_accuracy=" << fmt(cv.mean_accuracy()) << "\n";
  return kExitOk;
}

int cmd_ablate(std::ostream& out, const std::string& data, const std::string& split, int folds,
               const TrainOptions& o) {
  const TrainConfig config = o.config();
  const auto records = load_dataset(index_path(data), config.mode, o.resolution);
  const SkipAblation ab = ablate_skips(records, parse_split_scheme(split), folds, config);
  const auto arm = [&](const char* name, const CrossValidation& cv, double loss) {
    out << "[" << name << "]\n" << format_summary(cv.combined);
    out << "mean_fold_accuracy=" << fmt(cv.mean_accuracy()) << "\n";
    out << "mean_train_loss=" << fmt(loss) << "\n";
    const auto losses = cv.mean_epoch_loss();
    for (std::size_t e = 0; e < losses.size(); ++e) out << "epoch=" << e + 1 << " loss=" << fmt(losses[e]) << "\n";
  };
  arm("skips on", ab.with_skips, ab.with_loss());
  arm("skips off", ab.without_skips, ab.without_loss());
  return kExitOk;
}

int cmd_convert_depth(std::ostream& out, const std::string& in, const std::string& dest, bool fill) {
  MapArray depth = read_depth(in);
  if (fill) depth = fill_depth(depth);
  write_f32raw(dest, depth);
  out << "wrote " << dest << " (" << depth.rows() << "x" << depth.cols() << ")\n";
  return kExitOk;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    const std::string key = eq == std::string::npos ? "" : trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    entries.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return entries;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Grasp detection with a windowed-attention U-Net", "tfgrasp"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::function<int()> action;

  std::string dir;
  std::size_t count = 16;
  std::uint64_t seed = 0;
  Index size = kDefaultResolution;
  auto* synth = app.add_subcommand("synth-gen", "Write deterministic synthetic bar scenes");
  synth->add_option("--out", dir, "Output directory")->required();
  synth->add_option("--count", count, "Number of scenes")->check(CLI::Range(1, 1000000))->capture_default_str();
  synth->add_option("--seed", seed, "Scene stream seed")->capture_default_str();
  synth->add_option("--size", size, "Scene side in pixels")->check(CLI::PositiveNumber)->capture_default_str();
  synth->callback([&] { action = [&] { return cmd_synth_gen(out, dir, count, seed, size); }; });

  std::string data, ckpt, config_path;
  TrainOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--data", data, "Dataset directory or index file")->required();
  train_cmd->add_option("--out", ckpt, "Checkpoint path")->required();
  train_cmd->add_option("--config", config_path, "key=value file; flags override it");
  add_train_options(train_cmd, train_opts);
  train_cmd->callback([&] { action = [&] { return cmd_train(out, data, ckpt, train_opts); }; });

  std::string mode, split = "image";
  int folds = 1;
  bool verbose = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint under the rectangle metric");
  eval_cmd->add_option("--data", data, "Dataset directory or index file")->required();
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  eval_cmd->add_option("--mode", mode, "Input modality (default: from the checkpoint)")
      ->check(CLI::IsMember({"d", "rgb", "rgbd"}, CLI::ignore_case));
  eval_cmd->add_option("--split", split, "Fold scheme")
      ->check(CLI::IsMember({"image", "object"}))
      ->capture_default_str();
  eval_cmd->add_option("--folds", folds, "Report per-fold accuracy over K folds (1: single fold)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  eval_cmd->add_option("--seed", seed, "Split seed")->capture_default_str();
  eval_cmd->add_option("--resolution", size, "Model input side in pixels")->capture_default_str();
  eval_cmd->add_flag("--verbose", verbose, "Print one line per sample");
  eval_cmd->callback(
      [&] { action = [&] { return cmd_eval(out, data, ckpt, mode, split, folds, seed, size, verbose); }; });

  std::string image, depth, prefix;
  auto* predict_cmd = app.add_subcommand("predict", "Predict a grasp and write heatmaps for one image");
  predict_cmd->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  predict_cmd->add_option("--image", image, "PNG for RGB models, depth raster for depth models")->required();
  predict_cmd->add_option("--depth", depth, "Depth raster for RGB-D models");
  predict_cmd->add_option("--out-prefix", prefix, "Prefix of the written files")->required();
  predict_cmd->add_option("--resolution", size, "Model input side in pixels")->capture_default_str();
  predict_cmd->callback([&] { action = [&] { return cmd_predict(out, ckpt, image, depth, prefix, size); }; });

  std::string suite;
  auto* verify_cmd = app.add_subcommand("verify", "Run a property suite");
  verify_cmd->add_option("--suite", suite, "Suite name")->required()->check(CLI::IsMember(verify::suite_names()));
  verify_cmd->callback([&] { action = [&] { return verify::run_suite(suite, out) ? kExitOk : kExitFailure; }; });

  TrainOptions cv_opts;
  int cv_folds = 5;
  auto* cv_cmd = app.add_subcommand("crossval", "Train and evaluate with K-fold cross-validation");
  cv_cmd->add_option("--data", data, "Dataset directory or index file")->required();
  cv_cmd->add_option("--split", split, "Fold scheme")->check(CLI::IsMember({"image", "object"}))->capture_default_str();
  cv_cmd->add_option("--folds", cv_folds, "Number of folds")->check(CLI::Range(2, 1000))->capture_default_str();
  cv_cmd->add_option("--config", config_path, "key=value file; flags override it");
  cv_cmd->add_flag("--verbose", verbose, "Print one line per sample");
  add_train_options(cv_cmd, cv_opts);
  cv_cmd->callback([&] { action = [&] { return cmd_crossval(out, data, split, cv_folds, cv_opts, verbose); }; });

  TrainOptions ab_opts;
  auto* ab_cmd = app.add_subcommand("ablate", "Cross-validate with and without skip connections");
  ab_cmd->add_option("--data", data, "Dataset directory or index file")->required();
  ab_cmd->add_option("--split", split, "Fold scheme")->check(CLI::IsMember({"image", "object"}))->capture_default_str();
  ab_cmd->add_option("--folds", cv_folds, "Number of folds")->check(CLI::Range(2, 1000))->capture_default_str();
  ab_cmd->add_option("--config", config_path, "key=value file; flags override it");
  add_train_options(ab_cmd, ab_opts);
  ab_cmd->callback([&] { action = [&] { return cmd_ablate(out, data, split, cv_folds, ab_opts); }; });

  std::string in, dest;
  bool fill = false;
  auto* depth_cmd = app.add_subcommand("convert-depth", "Convert a text depth raster to .f32raw");
  depth_cmd->add_option("--in", in, "Text or .f32raw depth raster")->required();
  depth_cmd->add_option("--out", dest, ".f32raw output path")->required();
  depth_cmd->add_flag("--fill", fill, "Replace non-finite pixels by the nearest finite one");
  depth_cmd->callback([&] { action = [&] { return cmd_convert_depth(out, in, dest, fill); }; });

  try {
    std::vector<std::string> argv = expand_config(args, app);
    std::reverse(argv.begin(), argv.end());
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  try {
    return action();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace tfgrasp::cli
