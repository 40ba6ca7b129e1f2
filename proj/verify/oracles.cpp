#include "tfgrasp/verify/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tfgrasp/errors.hpp"
#include "tfgrasp/random.hpp"

namespace tfgrasp::verify {
namespace {

// Segment id of a coordinate in the shifted frame: the last window of each
// axis is split where the cyclic roll wrapped content around.
int segment(Index v, Index extent, Index window, Index shift) {
  if (shift == 0) return 0;
  if (v < extent - window) return 0;
  return v < extent - shift ? 1 : 2;
}

std::vector<double> project(std::span<const double> x, Index n, Index c, const std::vector<double>& w) {
  std::vector<double> out(static_cast<std::size_t>(n * c), 0.0);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < c; ++k)
      for (Index j = 0; j < c; ++j) out[i * c + j] += x[i * c + k] * w[k * c + j];
  return out;
}

}  // namespace

DenseAttentionResult dense_window_attention(std::span<const double> x, Index height, Index width, Index window,
                                            Index shift, const DenseAttentionParams& p) {
  const Index n = height * width, c = p.channels, heads = p.heads, hd = c / heads;
  const Index span = 2 * window - 1;
  if (static_cast<Index>(x.size()) != n * c) throw ShapeError("dense attention: input size mismatch");

  // Coordinates of every token in the rolled frame, where windows are
  // plain M x M tiles.
  std::vector<Index> row(n), col(n);
  for (Index i = 0; i < n; ++i) {
    row[i] = ((i / width) - shift + height) % height;
    col[i] = ((i % width) - shift + width) % width;
  }
  DenseAttentionResult res;
  res.allowed.assign(static_cast<std::size_t>(n * n), false);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const bool same_window = row[i] / window == row[j] / window && col[i] / window == col[j] / window;
      const bool same_region = segment(row[i], height, window, shift) == segment(row[j], height, window, shift) &&
                               segment(col[i], width, window, shift) == segment(col[j], width, window, shift);
      res.allowed[i * n + j] = same_window && same_region;
    }
  }

  const auto q = project(x, n, c, p.w_q);
  const auto k = project(x, n, c, p.w_k);
  const auto v = project(x, n, c, p.w_v);
  std::vector<double> merged(static_cast<std::size_t>(n * c), 0.0);
  res.weights.assign(static_cast<std::size_t>(heads * n * n), 0.0);
  std::vector<double> logits(static_cast<std::size_t>(n));
  for (Index h = 0; h < heads; ++h) {
    for (Index i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Index j = 0; j < n; ++j) {
        if (!res.allowed[i * n + j]) continue;
        double dot = 0;
        for (Index d = 0; d < hd; ++d) dot += q[i * c + h * hd + d] * k[j * c + h * hd + d];
        const Index rel = (row[i] % window - row[j] % window + window - 1) * span +
                          (col[i] % window - col[j] % window + window - 1);
        logits[j] = dot / std::sqrt(static_cast<double>(hd)) + p.bias_table[h * span * span + rel];
        mx = std::max(mx, logits[j]);
      }
      double total = 0;
      for (Index j = 0; j < n; ++j) {
        if (res.allowed[i * n + j]) total += std::exp(logits[j] - mx);
      }
      for (Index j = 0; j < n; ++j) {
        if (!res.allowed[i * n + j]) continue;
        const double a = std::exp(logits[j] - mx) / total;
        res.weights[(h * n + i) * n + j] = a;
        for (Index d = 0; d < hd; ++d) merged[i * c + h * hd + d] += a * v[j * c + h * hd + d];
      }
    }
  }
  res.output = project(merged, n, c, p.w_o);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < c; ++j) res.output[i * c + j] += p.b_o[j];
  return res;
}

bool inside_rect(const GraspRect& r, double x, double y) {
  const double dx = x - r.x, dy = y - r.y;
  const double u = dx * std::cos(r.theta) + dy * std::sin(r.theta);
  const double v = -dx * std::sin(r.theta) + dy * std::cos(r.theta);
  return std::abs(u) <= r.width / 2 && std::abs(v) <= r.height / 2;
}

double sampled_jaccard(const GraspRect& a, const GraspRect& b, std::size_t samples, std::uint64_t seed) {
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
  for (const GraspRect* r : {&a, &b}) {
    const double c = std::abs(std::cos(r->theta)), s = std::abs(std::sin(r->theta));
    const double ex = c * r->width / 2 + s * r->height / 2, ey = s * r->width / 2 + c * r->height / 2;
    x0 = std::min(x0, r->x - ex);
    x1 = std::max(x1, r->x + ex);
    y0 = std::min(y0, r->y - ey);
    y1 = std::max(y1, r->y + ey);
  }
  const auto side = static_cast<std::size_t>(std::max(1.0, std::floor(std::sqrt(static_cast<double>(samples)))));
  const double cw = (x1 - x0) / static_cast<double>(side), ch = (y1 - y0) / static_cast<double>(side);
  Rng rng(seed);
  std::size_t both = 0, either = 0;
  for (std::size_t i = 0; i < side; ++i) {
    for (std::size_t j = 0; j < side; ++j) {
      const double x = x0 + (static_cast<double>(j) + rng.uniform(0, 1)) * cw;
      const double y = y0 + (static_cast<double>(i) + rng.uniform(0, 1)) * ch;
      const bool in_a = inside_rect(a, x, y), in_b = inside_rect(b, x, y);
      both += in_a && in_b;
      either += in_a || in_b;
    }
  }
  return either ? static_cast<double>(both) / static_cast<double>(either) : 0.0;
}

double gradient_error(double analytic, double numeric, double floor) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  const double diff = std::abs(analytic - numeric);
  return scale < floor ? diff : diff / scale;
}

namespace {

double evaluate(const LossFn& f, std::span<const Tensor<double>> inputs) {
  NoGradScope<double> no_grad;
  return f(inputs).item();
}

// Leaves d loss / d input in each input's gradient buffer.
void analytic_gradients(const LossFn& f, std::vector<Tensor<double>>& inputs) {
  for (auto& t : inputs) t.drop_grad();
  Tape<double> tape;
  TapeScope<double> scope(tape);
  const Tensor<double> loss = f(inputs);
  tape.backward(loss);
}

}  // namespace

GradcheckResult gradcheck(const LossFn& f, std::vector<Tensor<double>> inputs, double eps) {
  analytic_gradients(f, inputs);
  GradcheckResult out;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (!inputs[t].requires_grad()) continue;
    const std::vector<double> grad(inputs[t].grad().begin(), inputs[t].grad().end());
    auto data = inputs[t].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + eps;
      const double up = evaluate(f, inputs);
      data[i] = keep - eps;
      const double down = evaluate(f, inputs);
      data[i] = keep;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = grad.empty() ? 0.0 : grad[i];
      const double err = gradient_error(analytic, numeric);
      ++out.checked;
      if (out.worst.empty() || err > out.max_error) {
        out.max_error = err;
        out.worst = "input" + std::to_string(t) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

GradcheckResult directional_gradcheck(const LossFn& f, std::vector<Tensor<double>> inputs, std::uint64_t seed,
                                      double eps) {
  analytic_gradients(f, inputs);
  Rng rng(seed);
  std::vector<std::vector<double>> dir(inputs.size());
  double norm = 0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (!inputs[t].requires_grad()) continue;
    dir[t].resize(static_cast<std::size_t>(inputs[t].numel()));
    for (auto& d : dir[t]) {
      d = rng.uniform(-1, 1);
      norm += d * d;
    }
  }
  norm = std::sqrt(norm);
  double analytic = 0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const auto g = inputs[t].grad();
    for (std::size_t i = 0; i < dir[t].size(); ++i) {
      dir[t][i] /= norm;
      if (!g.empty()) analytic += g[i] * dir[t][i];
    }
  }
  auto shift = [&](double step) {
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      auto data = inputs[t].mutable_data();
      for (std::size_t i = 0; i < dir[t].size(); ++i) data[i] += step * dir[t][i];
    }
  };
  std::vector<std::vector<double>> saved;
  for (const auto& t : inputs) saved.emplace_back(t.data().begin(), t.data().end());
  shift(eps);
  const double up = evaluate(f, inputs);
  for (std::size_t t = 0; t < inputs.size(); ++t) std::copy(saved[t].begin(), saved[t].end(), inputs[t].mutable_data().begin());
  shift(-eps);
  const double down = evaluate(f, inputs);
  for (std::size_t t = 0; t < inputs.size(); ++t) std::copy(saved[t].begin(), saved[t].end(), inputs[t].mutable_data().begin());
  GradcheckResult out;
  out.max_error = gradient_error(analytic, (up - down) / (2 * eps));
  out.checked = 1;
  out.worst = "direction";
  return out;
}

}  // namespace tfgrasp::verify
