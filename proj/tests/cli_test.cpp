#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include "cli.hpp"
#include "tfgrasp/errors.hpp"
#include "tfgrasp/image_io.hpp"
#include "tfgrasp/train_eval.hpp"

namespace tfgrasp {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code = -1;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Fresh directory per test, removed afterwards.
class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("tfgrasp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Four synthetic scenes and a one-epoch D=4 checkpoint trained on them.
  void make_data_and_checkpoint(const std::string& mode = "rgbd") {
    ASSERT_EQ(run({"synth-gen", "--out", path("data"), "--count", "4", "--seed", "7"}).code, 0);
    const CliRun t = run({"train", "--data", path("data"), "--out", path("m.tfgr"), "--epochs", "1", "--batch", "2",
                       "--embed-dim", "4", "--seed", "1", "--mode", mode});
    ASSERT_EQ(t.code, 0) << t.err;
  }

  fs::path dir_;
};

std::string summary_value(const std::string& summary, const std::string& key) {
  std::istringstream in(summary);
  for (std::string line; std::getline(in, line);) {
    if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
  }
  return "";
}

std::map<std::string, std::string> directory_bytes(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) files[e.path().filename().string()] = read_file(e.path().string());
  return files;
}

TEST(ConfigText, Parsing) {
  const auto entries = cli::parse_config_text("# comment\n\nepochs = 3\n lr=0.01 \r\n");
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0], (std::pair<std::string, std::string>{"epochs", "3"}));
  EXPECT_EQ(entries[1], (std::pair<std::string, std::string>{"lr", "0.01"}));
  EXPECT_THROW(cli::parse_config_text("epochs 3\n"), ConfigError);
  EXPECT_THROW(cli::parse_config_text("=3\n"), ConfigError);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"synth-gen", "--out", path("d"), "--count", "0"}).code, 2);
  EXPECT_EQ(run({"train", "--data", path("d")}).code, 2);
  EXPECT_EQ(run({"verify", "--suite", "nope"}).code, 2);
  EXPECT_EQ(run({"train", "--data", path("d"), "--out", "x", "--skips", "maybe"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, SynthGenIsReproducible) {
  const CliRun a = run({"synth-gen", "--out", path("a"), "--count", "16", "--seed", "7"});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(run({"synth-gen", "--out", path("b"), "--count", "16", "--seed", "7"}).code, 0);
  const auto files = directory_bytes(path("a"));
  EXPECT_EQ(files.size(), 16u * 3 + 1);
  EXPECT_EQ(files, directory_bytes(path("b")));
  EXPECT_EQ(read_index(path("a/index.tsv")).size(), 16u);
  const std::string index = files.at("index.tsv");
  EXPECT_EQ(std::count(index.begin(), index.end(), '\n'), 16);
}

TEST_F(CliTest, SynthGenUnwritablePathFails) {
  write_file(path("file"), "x");
  const CliRun r = run({"synth-gen", "--out", path("file/sub"), "--count", "2"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("file/sub"), std::string::npos);
}

TEST_F(CliTest, TrainMatchesLibraryAndReloads) {
  make_data_and_checkpoint();
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 2;
  c.embed_dim = 4;
  c.seed = 1;
  const auto records = load_dataset(path("data/index.tsv"), InputMode::kRgbd);
  const TrainResult direct = train(records, c);
  EXPECT_TRUE(read_file(path("m.tfgr")) == encode_checkpoint(direct.params));

  const CliRun e = run({"eval", "--data", path("data"), "--ckpt", path("m.tfgr")});
  ASSERT_EQ(e.code, 0) << e.err;
  const EvalReport in_memory = evaluate(records, direct.params, direct.model);
  EXPECT_EQ(std::stod(summary_value(e.out, "accuracy")), in_memory.accuracy());
  EXPECT_EQ(summary_value(e.out, "total"), "4");
}

TEST_F(CliTest, TrainPrintsEpochLinesAndHonorsConfigFile) {
  ASSERT_EQ(run({"synth-gen", "--out", path("data"), "--count", "2"}).code, 0);
  write_file(path("c.cfg"), "epochs = 3\nembed-dim = 4\nbatch = 2\n");
  const CliRun a = run({"train", "--data", path("data"), "--config", path("c.cfg"), "--epochs", "2", "--out",
                     path("a.tfgr")});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out.rfind("epoch=1 loss=", 0), 0u);
  EXPECT_NE(a.out.find("\nepoch=2 loss="), std::string::npos);
  EXPECT_EQ(a.out.find("epoch=3"), std::string::npos);
  EXPECT_EQ(infer_config(load_checkpoint(path("a.tfgr"))).embed_dim, 4);

  write_file(path("bad.cfg"), "epochs = 1\nlearning_rate = 0.1\n");
  const CliRun bad = run({"train", "--data", path("data"), "--config", path("bad.cfg"), "--out", path("b.tfgr")});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("learning_rate"), std::string::npos);
  write_file(path("broken.cfg"), "epochs 1\n");
  EXPECT_EQ(run({"train", "--data", path("data"), "--config", path("broken.cfg"), "--out", path("b.tfgr")}).code,
            2);
  EXPECT_FALSE(fs::exists(path("b.tfgr")));
}

TEST_F(CliTest, ModeSetsInputChannels) {
  ASSERT_EQ(run({"synth-gen", "--out", path("data"), "--count", "2"}).code, 0);
  for (const auto& [mode, channels] : std::vector<std::pair<std::string, Index>>{{"d", 1}, {"rgbd", 4}}) {
    const CliRun r = run({"train", "--data", path("data"), "--out", path(mode + ".tfgr"), "--epochs", "1",
                       "--embed-dim", "4", "--mode", mode});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(infer_config(load_checkpoint(path(mode + ".tfgr"))).in_channels, channels) << mode;
  }
}

TEST_F(CliTest, CorruptDataNamesTheFile) {
  ASSERT_EQ(run({"synth-gen", "--out", path("data"), "--count", "2"}).code, 0);
  write_file(path("data/scene_0001.txt"), "1 2\n3 oops\n");
  const CliRun r = run({"train", "--data", path("data"), "--out", path("m.tfgr"), "--epochs", "1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("scene_0001.txt"), std::string::npos) << r.err;
}

TEST_F(CliTest, EvalErrors) {
  make_data_and_checkpoint();
  const CliRun missing = run({"eval", "--data", path("data"), "--ckpt", path("none.tfgr")});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find(path("none.tfgr")), std::string::npos);

  const CliRun mismatch = run({"eval", "--data", path("data"), "--ckpt", path("m.tfgr"), "--mode", "d"});
  EXPECT_EQ(mismatch.code, 1);
  EXPECT_NE(mismatch.err.find("1 channels"), std::string::npos) << mismatch.err;
  EXPECT_NE(mismatch.err.find("expects 4"), std::string::npos) << mismatch.err;
}

TEST_F(CliTest, EvalFoldsPartitionTheData) {
  make_data_and_checkpoint();
  const CliRun r = run({"eval", "--data", path("data"), "--ckpt", path("m.tfgr"), "--folds", "2", "--split", "object"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(summary_value(r.out, "folds"), "2");
  EXPECT_EQ(summary_value(r.out, "total"), "4");
  EXPECT_EQ(std::stoi(summary_value(r.out, "fold0_total")) + std::stoi(summary_value(r.out, "fold1_total")), 4);
}

TEST_F(CliTest, PredictWritesConsistentArtifacts) {
  make_data_and_checkpoint();
  const std::vector<std::string> args{"predict",       "--ckpt",  path("m.tfgr"), "--image",
                                      path("data/scene_0000.png"), "--depth", path("data/scene_0000.f32raw"),
                                      "--out-prefix",  path("P")};
  const CliRun r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string line = read_file(path("P_grasp.txt"));
  EXPECT_EQ(r.out, line);

  std::istringstream in(line);
  Index x = -1, y = -1;
  double theta = 0, width = 0, quality = -1;
  ASSERT_TRUE(in >> x >> y >> theta >> width >> quality);
  EXPECT_GE(quality, 0.0);
  EXPECT_LE(quality, 1.0);
  EXPECT_GT(theta, -M_PI / 2 - 1e-9);
  EXPECT_LE(theta, M_PI / 2 + 1e-9);

  for (const char* map : {"q", "angle", "width"}) {
    const std::string bytes = read_file(path(std::string("P_") + map + ".pgm"));
    EXPECT_EQ(bytes.rfind("P5 224 224 255\n", 0), 0u) << map;
    EXPECT_EQ(bytes.size(), 15u + 224 * 224) << map;
  }
  // The emitted pose sits on a maximum of the emitted quality map.
  const MapArray q = read_pgm(path("P_q.pgm"));
  EXPECT_EQ(q(y, x), q.maxCoeff());
  EXPECT_EQ(q(y, x), 255.0f);

  const auto before = directory_bytes(dir_);
  ASSERT_EQ(run(args).code, 0);
  EXPECT_EQ(directory_bytes(dir_), before);
}

TEST_F(CliTest, PredictNeedsDepthForRgbdCheckpoint) {
  make_data_and_checkpoint();
  const CliRun r =
      run({"predict", "--ckpt", path("m.tfgr"), "--image", path("data/scene_0000.png"), "--out-prefix", path("P")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--depth"), std::string::npos);
  const CliRun missing = run({"predict", "--ckpt", path("m.tfgr"), "--image", path("none.png"), "--depth",
                           path("data/scene_0000.f32raw"), "--out-prefix", path("P")});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("none.png"), std::string::npos);
}

TEST_F(CliTest, PredictDepthOnlyCheckpoint) {
  make_data_and_checkpoint("d");
  const CliRun r =
      run({"predict", "--ckpt", path("m.tfgr"), "--image", path("data/scene_0001.f32raw"), "--out-prefix", path("D")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("D_q.pgm")));
}

TEST_F(CliTest, VerifyGeometrySuitePasses) {
  const CliRun r = run({"verify", "--suite", "geometry"});
  EXPECT_EQ(r.code, 0) << r.out;
  std::istringstream in(r.out);
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line); ++lines) EXPECT_EQ(line.rfind("PASS ", 0), 0u) << line;
  EXPECT_GT(lines, 3u);
}

TEST_F(CliTest, ConvertDepthFillsHoles) {
  write_file(path("d.txt"), "1 nan\n2 3\n");
  const CliRun plain = run({"convert-depth", "--in", path("d.txt"), "--out", path("a.f32raw")});
  ASSERT_EQ(plain.code, 0) << plain.err;
  EXPECT_TRUE(std::isnan(read_f32raw(path("a.f32raw"))(0, 1)));
  ASSERT_EQ(run({"convert-depth", "--in", path("d.txt"), "--out", path("b.f32raw"), "--fill"}).code, 0);
  const MapArray filled = read_f32raw(path("b.f32raw"));
  EXPECT_EQ(filled(0, 1), 1.0f);
  EXPECT_EQ(filled(1, 1), 3.0f);
  EXPECT_EQ(run({"convert-depth", "--in", path("none.txt"), "--out", path("c.f32raw")}).code, 1);
}

TEST_F(CliTest, CrossvalAndAblateReport) {
  ASSERT_EQ(run({"synth-gen", "--out", path("data"), "--count", "4"}).code, 0);
  const std::vector<std::string> common{"--data", path("data"), "--folds", "2", "--epochs", "1", "--embed-dim", "4",
                                        "--batch", "2"};
  std::vector<std::string> cv{"crossval"};
  cv.insert(cv.end(), common.begin(), common.end());
  const CliRun r = run(cv);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("fold=0 epoch=1 loss="), std::string::npos);
  EXPECT_NE(r.out.find("fold=1 epoch=1 loss="), std::string::npos);
  EXPECT_EQ(summary_value(r.out, "total"), "4");
  EXPECT_FALSE(summary_value(r.out, "mean_fold_accuracy").empty());

  std::vector<std::string> ab{"ablate"};
  ab.insert(ab.end(), common.begin(), common.end());
  const CliRun a = run(ab);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("[skips on]"), std::string::npos);
  EXPECT_NE(a.out.find("[skips off]"), std::string::npos);
  EXPECT_EQ(std::count(a.out.begin(), a.out.end(), '['), 2);
}

}  // namespace
}  // namespace tfgrasp
