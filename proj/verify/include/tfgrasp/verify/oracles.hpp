#pragma once

// Reference implementations written without the library's tensor ops:
// dense masked attention over a whole token map, a sampled rectangle area
// oracle and central finite-difference gradient checks in double.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tfgrasp/geometry.hpp"
#include "tfgrasp/tensor.hpp"

namespace tfgrasp::verify {

// Attention weights as plain row-major arrays. Projections are [C, C]
// applied as x * W; bias_table is [heads, (2M-1)^2].
struct DenseAttentionParams {
  Index channels = 0;
  Index heads = 0;
  std::vector<double> w_q, w_k, w_v, w_o, b_o, bias_table;
};

struct DenseAttentionResult {
  std::vector<double> output;  // [H*W, C] in the map's own token order
  // [heads, H*W, H*W]; zero for disallowed pairs.
  std::vector<double> weights;
  // [H*W, H*W]; true where token i may attend to token j.
  std::vector<bool> allowed;
};

// Full (H*W) x (H*W) attention where token pairs outside a common
// (shifted) window, or from different wrap-around regions, are excluded.
// Window membership, regions and relative offsets are computed from pixel
// coordinates directly.
DenseAttentionResult dense_window_attention(std::span<const double> x, Index height, Index width, Index window,
                                            Index shift, const DenseAttentionParams& p);

// True when point (x, y) lies inside the rectangle (boundary inclusive).
bool inside_rect(const GraspRect& rect, double x, double y);

// Jaccard index estimated from `samples` stratified uniform points over the
// union's axis-aligned bounding box (one jittered point per grid cell).
double sampled_jaccard(const GraspRect& a, const GraspRect& b, std::size_t samples, std::uint64_t seed);

// Loss builder for gradient checks: maps inputs to a one-element tensor.
using LossFn = std::function<Tensor<double>(std::span<const Tensor<double>>)>;

struct GradcheckResult {
  double max_error = 0;  // max relative error (absolute below `floor`)
  std::size_t checked = 0;
  std::string worst;     // "<input>[<element>]" or "direction"
};

// Relative error |a - n| / max(|a|, |n|), or |a - n| when both are below
// `floor`.
double gradient_error(double analytic, double numeric, double floor = 1e-7);

// Checks every element of every input that requires grad against a central
// difference with step `eps`.
GradcheckResult gradcheck(const LossFn& f, std::vector<Tensor<double>> inputs, double eps = 1e-5);

// Checks the directional derivative along a random unit direction (seeded)
// over all inputs that require grad.
GradcheckResult directional_gradcheck(const LossFn& f, std::vector<Tensor<double>> inputs, std::uint64_t seed,
                                      double eps = 1e-5);

}  // namespace tfgrasp::verify
