#pragma once

// Window-based multi-head self-attention with a learnable relative position
// bias, cyclic-shift masking, and the two-step (local + shifted) swin block.
//
// Token maps are stored row-major as [B * H * W, C]. Windows are laid out as
// [B * num_windows, M * M, C] with windows in row-major tile order and tokens
// in row-major order inside each tile.

#include <string>
#include <vector>

#include "tfgrasp/ops.hpp"
#include "tfgrasp/params.hpp"

namespace tfgrasp {

// Value used for disallowed attention pairs.
inline constexpr double kMaskValue = -1e9;

// index(i, j) = (drow + M - 1) * (2M - 1) + (dcol + M - 1) for tokens i, j of
// one window. Row-major [M*M, M*M].
std::vector<Index> build_relative_position_index(Index window);

// Region ids of the cyclically shifted map, partitioned into windows:
// [num_windows, M*M]. All zeros when shift == 0.
std::vector<int> build_shift_regions(Index height, Index width, Index window, Index shift);

// [num_windows, M*M, M*M] with 0 for same-region pairs and kMaskValue otherwise.
template <typename Scalar>
Tensor<Scalar> build_shift_mask(Index height, Index width, Index window, Index shift);

// Precomputed geometry for one attention pass over an H x W token map.
struct WindowLayout {
  Index height = 0;
  Index width = 0;
  Index window = 0;
  Index shift = 0;
  // Window-ordered token r reads source token to_windows[r] (shift applied).
  IndexMap to_windows;
  // Source token t is found at window-ordered position from_windows[t].
  IndexMap from_windows;
  std::vector<Index> relative_index;
  // [num_windows, T, T] as double; empty when shift == 0.
  std::vector<double> mask;

  Index tokens() const { return window * window; }
  Index num_windows() const { return (height / window) * (width / window); }
};

WindowLayout make_window_layout(Index height, Index width, Index window, Index shift);

// x [H, W, C] or [B, H, W, C] -> [B * num_windows, M*M, C].
template <typename Scalar>
Tensor<Scalar> window_partition(const Tensor<Scalar>& x, Index window);
// Inverse of window_partition: -> [B, H, W, C].
template <typename Scalar>
Tensor<Scalar> window_reverse(const Tensor<Scalar>& windows, Index height, Index width, Index window);
// Rolls x [B, H, W, C] so that out[i, j] = x[(i + dy) mod H, (j + dx) mod W].
template <typename Scalar>
Tensor<Scalar> cyclic_shift(const Tensor<Scalar>& x, Index dy, Index dx);

template <typename Scalar>
struct AttentionParams {
  Tensor<Scalar> w_q, w_k, w_v;  // [C, C]
  Tensor<Scalar> w_o;            // [C, C]
  Tensor<Scalar> b_o;            // [C]
  Tensor<Scalar> bias_table;     // [heads, (2M-1)^2]
  Index heads() const { return bias_table.dim(0); }
};

template <typename Scalar>
struct NormParams {
  Tensor<Scalar> gamma, beta;
};

template <typename Scalar>
struct MlpParams {
  Tensor<Scalar> w1, b1, w2, b2;
};

// LN -> (S)W-MSA -> residual, LN -> MLP -> residual.
template <typename Scalar>
struct SwinSubBlockParams {
  NormParams<Scalar> norm1;
  AttentionParams<Scalar> attn;
  NormParams<Scalar> norm2;
  MlpParams<Scalar> mlp;
};

template <typename Scalar>
struct SwinBlockParams {
  SwinSubBlockParams<Scalar> local;
  SwinSubBlockParams<Scalar> shifted;
};

inline constexpr Index kMlpRatio = 4;

// Registers "<prefix>.wmsa.*" and "<prefix>.swmsa.*".
template <typename Scalar>
void register_swin_block(ParamSet<Scalar>& set, const std::string& prefix, Index dim, Index heads,
                         Index window);
template <typename Scalar>
SwinBlockParams<Scalar> swin_block_params(const ParamSet<Scalar>& set, const std::string& prefix);
// Parameter count of one block, closed form.
Index swin_block_parameter_count(Index dim, Index heads, Index window);

// Multi-head attention inside windows. x [N, T, C] (or [T, C]),
// relative_index [T*T], mask [num_windows, T, T] or empty; when present, N
// must be a multiple of num_windows and window n uses mask n % num_windows.
// When `weights` is non-null it receives the softmax output [N, heads, T, T].
template <typename Scalar>
Tensor<Scalar> mhsa(const Tensor<Scalar>& x, const AttentionParams<Scalar>& p,
                    const std::vector<Index>& relative_index, const std::vector<double>& mask,
                    Tensor<Scalar>* weights = nullptr);

// (Shifted-)window attention over token maps x [B * H * W, C]: gathers
// windows (applying the layout's cyclic shift), runs mhsa with the layout's
// mask and scatters back. `weights` as in mhsa, in window order.
template <typename Scalar>
Tensor<Scalar> window_attention(const Tensor<Scalar>& x, const AttentionParams<Scalar>& p, const WindowLayout& layout,
                                Tensor<Scalar>* weights = nullptr);

// One LN/attention/LN/MLP half-block over tokens x [B * H * W, C].
template <typename Scalar>
Tensor<Scalar> swin_sub_block(const Tensor<Scalar>& x, const SwinSubBlockParams<Scalar>& p,
                              const WindowLayout& layout);

// The local-window pass followed by the shifted-window pass.
template <typename Scalar>
Tensor<Scalar> swin_block(const Tensor<Scalar>& x, const SwinBlockParams<Scalar>& p, const WindowLayout& local,
                          const WindowLayout& shifted);

}  // namespace tfgrasp
