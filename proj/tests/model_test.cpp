#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "tfgrasp/model.hpp"
#include "tfgrasp/random.hpp"

namespace tfgrasp {
namespace {

using T = Tensor<float>;

T random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return T(std::move(shape), std::move(v));
}

std::vector<float> values(const T& t) { return {t.data().begin(), t.data().end()}; }

// Same stage structure at 128 px with window 4: grids 32, 16, 8, 4. The
// last stage keeps several shifted regions per window so every attention
// tensor stays live.
ModelConfig tiny_config(Index channels, bool skips) {
  ModelConfig c;
  c.in_channels = channels;
  c.embed_dim = 8;
  c.patch_size = 4;
  c.window = 4;
  c.heads = {1, 2, 2, 4};
  c.resolution = 128;
  c.use_skips = skips;
  return c;
}

// Independent enumeration of every tensor in the network.
Index closed_form_count(Index channels, Index d, Index window, const std::array<Index, 4>& heads, bool skips) {
  const Index table = (2 * window - 1) * (2 * window - 1);
  auto block = [&](Index c, Index h) {
    const Index half = 2 * c + 4 * c * c + c + h * table + 2 * c + c * 4 * c + 4 * c + 4 * c * c + c;
    return 2 * half;
  };
  Index n = d * channels * 16 + d + 2 * d;  // patch embed kernel, bias, norm
  for (int s = 0; s < 4; ++s) {
    const Index c = d << s;
    n += block(c, heads[s]);
    if (s < 3) n += 4 * c * 2 * c;  // merge
    n += block(c, heads[s]);        // decoder block
    if (skips) n += 2 * c * c + c;
    if (s > 0) n += c * 2 * c;  // expand
  }
  n += block(8 * d, heads[3]);     // bottleneck
  n += 2 * d;                      // decoder norm
  n += d * 2 * d + (d / 2) * d;    // final expansions
  n += 4 * (d / 4 + 1);            // heads
  return n;
}

TEST(Model, DeskScaleParameterCount) {
  for (bool skips : {true, false}) {
    for (Index ch : {1, 3, 4}) {
      ModelConfig c;
      c.in_channels = ch;
      c.use_skips = skips;
      EXPECT_EQ(init_model<float>(c, 0).parameter_count(), closed_form_count(ch, 16, 7, c.heads, skips));
    }
  }
  ModelConfig c;
  EXPECT_EQ(init_model<float>(c, 0).parameter_count(), 1594240);
}

TEST(Model, ConfigValidation) {
  ModelConfig c;
  c.resolution = 220;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.heads = {1, 2, 4, 3};
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(ModelConfig{}.validate());
}

TEST(Model, InputModes) {
  EXPECT_EQ(input_channels(parse_input_mode("d")), 1);
  EXPECT_EQ(input_channels(parse_input_mode("RGB")), 3);
  EXPECT_EQ(input_channels(parse_input_mode("rgb-d")), 4);
  EXPECT_THROW(parse_input_mode("ir"), ConfigError);
}

TEST(PatchEmbed, TokenCounts) {
  ModelConfig c = tiny_config(1, true);
  c.resolution = 8;
  ParamSet<float> p(1);
  p.normal("patch_embed.kernel", {8, 1, 4, 4});
  p.zeros("patch_embed.bias", {8});
  p.ones("patch_embed.norm.gamma", {8});
  p.zeros("patch_embed.norm.beta", {8});
  EXPECT_EQ(patch_embed(random_tensor({1, 1, 8, 8}, 2), p, c).shape(), (Shape{4, 8}));
  const T zero_tokens = patch_embed(T::zeros({1, 1, 8, 8}), p, c);
  for (float v : zero_tokens.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(patch_embed(T::zeros({1, 3, 8, 8}), p, c), ConfigError);

  ModelConfig desk;
  const auto params = init_model<float>(desk, 3);
  EXPECT_EQ(patch_embed(random_tensor({1, 4, 224, 224}, 4), params, desk).dim(0), 3136);
}

TEST(PatchMerge, ShapesAndIndexing) {
  const Index c = 3;
  EXPECT_EQ(patch_merge(random_tensor({56 * 56, c}, 5), T::zeros({4 * c, 2 * c}), 56, 56).shape(),
            (Shape{28 * 28, 2 * c}));
  // First 2C rows of the identity select the first two sub-patches.
  std::vector<float> w(static_cast<std::size_t>(4 * c * 2 * c), 0.0f);
  for (Index i = 0; i < 2 * c; ++i) w[i * 2 * c + i] = 1;
  const T x = random_tensor({4, c}, 6);
  const T out = patch_merge(x, T({4 * c, 2 * c}, w), 2, 2);
  EXPECT_EQ(out.shape(), (Shape{1, 2 * c}));
  for (Index i = 0; i < 2 * c; ++i) EXPECT_EQ(out.data()[i], x.data()[i]);
  EXPECT_THROW(patch_merge(random_tensor({3 * 3, c}, 7), T::zeros({4 * c, 2 * c}), 3, 3), ShapeError);
}

TEST(PatchExpand, ShapesAndZeros) {
  const Index c = 8;
  const T up = patch_expand(random_tensor({49, 8 * c}, 8), T::zeros({8 * c, 16 * c}), 7, 7);
  EXPECT_EQ(up.shape(), (Shape{14 * 14, 4 * c}));
  for (float v : up.data()) EXPECT_EQ(v, 0.0f);
  const T x = random_tensor({4 * 4, c}, 9);
  const T merged = patch_merge(x, random_tensor({4 * c, 2 * c}, 10), 4, 4);
  EXPECT_EQ(patch_expand(merged, random_tensor({2 * c, 4 * c}, 11), 2, 2).shape(), x.shape());
  EXPECT_THROW(patch_expand(random_tensor({4, 3}, 12), T::zeros({3, 6}), 2, 2), ShapeError);
}

TEST(Forward, DeskShapesForAllModes) {
  for (InputMode mode : {InputMode::kDepth, InputMode::kRgb, InputMode::kRgbd}) {
    ModelConfig c;
    c.in_channels = input_channels(mode);
    const auto params = init_model<float>(c, 13);
    ForwardTrace<float> trace;
    NoGradScope<float> off;
    const T out = forward(random_tensor({c.in_channels, 224, 224}, 14), params, c, &trace);
    EXPECT_EQ(out.shape(), (Shape{4, 224, 224}));
    EXPECT_EQ(trace.encoder_grids, (std::vector<Index>{56, 28, 14, 7}));
    EXPECT_EQ(trace.decoder_grids, (std::vector<Index>{7, 14, 28, 56}));
    for (Index i = 0; i < 224 * 224; ++i) {
      EXPECT_GE(out.data()[i], 0.0f);
      EXPECT_LE(out.data()[i], 1.0f);
    }
  }
}

TEST(Forward, Deterministic) {
  const ModelConfig c = tiny_config(4, true);
  const T x = random_tensor({2, 4, 128, 128}, 15);
  const T a = forward(x, init_model<float>(c, 16), c);
  const T b = forward(x, init_model<float>(c, 16), c);
  EXPECT_EQ(values(a), values(b));
  EXPECT_NE(values(a), values(forward(x, init_model<float>(c, 17), c)));
}

TEST(Forward, BatchMatchesSingleImages) {
  const ModelConfig c = tiny_config(3, true);
  const auto params = init_model<float>(c, 18);
  const T x = random_tensor({2, 3, 128, 128}, 19);
  const T batched = forward(x, params, c);
  const Index per = 3 * 128 * 128;
  for (Index b = 0; b < 2; ++b) {
    const T one(Shape{3, 128, 128}, std::vector<float>(x.data().begin() + b * per, x.data().begin() + (b + 1) * per));
    const T single = forward(one, params, c);
    for (Index i = 0; i < single.numel(); ++i) EXPECT_NEAR(single.data()[i], batched.data()[b * single.numel() + i], 1e-6);
  }
}

TEST(Forward, SkipsChangeOnlyTheDecoder) {
  ModelConfig with = tiny_config(4, true);
  ModelConfig without = tiny_config(4, false);
  const auto p_with = init_model<float>(with, 20);
  const auto p_without = init_model<float>(without, 20);
  const T x = random_tensor({4, 128, 128}, 21);
  ForwardTrace<float> a, b;
  const T out_a = forward(x, p_with, with, &a);
  const T out_b = forward(x, p_without, without, &b);
  ASSERT_EQ(a.encoder_outputs.size(), 4u);
  for (std::size_t s = 0; s < 4; ++s) EXPECT_EQ(values(a.encoder_outputs[s]), values(b.encoder_outputs[s]));
  EXPECT_EQ(values(a.bottleneck), values(b.bottleneck));
  EXPECT_NE(values(out_a), values(out_b));
}

TEST(Forward, WrongChannelsIsConfigError) {
  const ModelConfig c = tiny_config(4, true);
  EXPECT_THROW(forward(random_tensor({3, 128, 128}, 22), init_model<float>(c, 23), c), ConfigError);
  ModelConfig skips = c;
  EXPECT_THROW(forward(random_tensor({4, 128, 128}, 24), init_model<float>(tiny_config(4, false), 23), skips),
               ConfigError);
}

TEST(Forward, EveryParameterReceivesGradient) {
  for (bool skips : {true, false}) {
    const ModelConfig c = tiny_config(4, skips);
    auto params = init_model<float>(c, 25);
    // Zero-initialized biases and norm shifts still get gradients; make the
    // forward generic by randomizing all tensors.
    for (std::size_t i = 0; i < params.size(); ++i) {
      Rng rng(mix_seed(26, i));
      for (auto& v : params.tensors()[i].mutable_data()) v += static_cast<float>(rng.uniform(-0.1, 0.1));
    }
    const T x = random_tensor({1, 4, 128, 128}, 27);
    const T target = random_tensor({1, 4, 128, 128}, 28);
    Tape<float> tape;
    TapeScope<float> scope(tape);
    tape.backward(mse_loss(forward(x, params, c), target));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto g = params.tensors()[i].grad();
      EXPECT_TRUE(std::any_of(g.begin(), g.end(), [](float v) { return v != 0.0f; }))
          << params.names()[i] << " skips=" << skips;
    }
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const ModelConfig c = tiny_config(3, false);
  const auto params = init_model<float>(c, 29);
  const std::string bytes = encode_checkpoint(params);
  EXPECT_EQ(bytes.substr(0, 4), "TFGR");
  const auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.names(), params.names());
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(back.tensors()[i].shape(), params.tensors()[i].shape());
    EXPECT_EQ(values(back.tensors()[i]), values(params.tensors()[i]));
  }
  EXPECT_EQ(encode_checkpoint(back), bytes);
  const ModelConfig inferred = infer_config(back, 128);
  EXPECT_EQ(inferred.in_channels, 3);
  EXPECT_EQ(inferred.embed_dim, 8);
  EXPECT_EQ(inferred.window, 4);
  EXPECT_EQ(inferred.heads, c.heads);
  EXPECT_FALSE(inferred.use_skips);

  const auto path = std::filesystem::temp_directory_path() / "tfgrasp_model_test.ckpt";
  save_checkpoint(path.string(), params);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(path.string())), bytes);
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptInputIsFormatError) {
  const std::string bytes = encode_checkpoint(init_model<float>(tiny_config(1, true), 30));
  EXPECT_THROW(decode_checkpoint("XXXX" + bytes.substr(4)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/model.ckpt"), IoError);
}

}  // namespace
}  // namespace tfgrasp
