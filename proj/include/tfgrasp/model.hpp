#pragma once

// U-shaped grasp network: patch embedding, four windowed-attention encoder
// stages joined by patch merging, a bottleneck block, four decoder stages
// joined by patch expanding (optionally fused with same-resolution encoder
// features), a x4 expansion back to input resolution and four 1x1 heads.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tfgrasp/params.hpp"
#include "tfgrasp/swin.hpp"

namespace tfgrasp {

enum class InputMode { kDepth, kRgb, kRgbd };

Index input_channels(InputMode mode);
std::string to_string(InputMode mode);
// Accepts "d", "rgb", "rgbd" (case-insensitive, "rgb-d" too).
InputMode parse_input_mode(const std::string& text);

inline constexpr int kStages = 4;
// Output channel order of forward().
inline constexpr Index kQualityMap = 0;
inline constexpr Index kCosMap = 1;
inline constexpr Index kSinMap = 2;
inline constexpr Index kWidthMap = 3;

struct ModelConfig {
  Index in_channels = 4;
  Index embed_dim = 16;
  Index patch_size = 4;
  Index window = 7;
  std::array<Index, kStages> heads = {1, 2, 4, 8};
  Index resolution = 224;
  bool use_skips = true;

  // Throws ConfigError when a stage grid is not a whole number of windows,
  // a stage width is not divisible by its heads, or the final expansions
  // would produce fractional channel counts.
  void validate() const;
  // Tokens per side at encoder stage `stage` (0-based).
  Index stage_grid(int stage) const { return resolution / patch_size >> stage; }
  Index stage_dim(int stage) const { return embed_dim << stage; }
};

template <typename Scalar>
ParamSet<Scalar> init_model(const ModelConfig& config, std::uint64_t seed);

// Reads in_channels, embed_dim, patch_size, window, heads and use_skips back
// from parameter names and shapes. Resolution is taken from `resolution`.
template <typename Scalar>
ModelConfig infer_config(const ParamSet<Scalar>& params, Index resolution = 224);

// image [B, C, H, W] -> tokens [B * (H/p) * (W/p), D].
template <typename Scalar>
Tensor<Scalar> patch_embed(const Tensor<Scalar>& images, const ParamSet<Scalar>& params, const ModelConfig& config);

// Concatenates each 2x2 token group (row-major inside the group) and
// projects 4C -> w.dim(1). x [B * H * W, C] -> [B * H/2 * W/2, w.dim(1)].
template <typename Scalar>
Tensor<Scalar> patch_merge(const Tensor<Scalar>& x, const Tensor<Scalar>& w, Index height, Index width);

// Projects C -> 2C and unfolds each token into a 2x2 group of C/2 channels.
// x [B * H * W, C] -> [B * 2H * 2W, C/2].
template <typename Scalar>
Tensor<Scalar> patch_expand(const Tensor<Scalar>& x, const Tensor<Scalar>& w, Index height, Index width);

template <typename Scalar>
struct ForwardTrace {
  std::vector<Index> encoder_grids;
  std::vector<Index> decoder_grids;
  std::vector<Tensor<Scalar>> encoder_outputs;
  Tensor<Scalar> bottleneck;
  std::vector<Tensor<Scalar>> decoder_outputs;  // deepest stage first
  Tensor<Scalar> pixel_features;                // input to the heads
};

// images [B, C, H, W] (or [C, H, W]) -> maps [B, 4, H, W] in the order
// quality (sigmoid), cos 2theta, sin 2theta, width.
template <typename Scalar>
Tensor<Scalar> forward(const Tensor<Scalar>& images, const ParamSet<Scalar>& params, const ModelConfig& config,
                       ForwardTrace<Scalar>* trace = nullptr);

// Checkpoint: "TFGR", u32 version (1), u32 tensor count, then per tensor
// u16 name length, UTF-8 name, u8 rank, u64 dims, float32 payload. All
// integers and floats little-endian.
std::string encode_checkpoint(const ParamSet<float>& params);
ParamSet<float> decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const ParamSet<float>& params);
ParamSet<float> load_checkpoint(const std::string& path);

}  // namespace tfgrasp
