#include "tfgrasp/verify/suites.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "tfgrasp/errors.hpp"
#include "tfgrasp/geometry.hpp"
#include "tfgrasp/model.hpp"
#include "tfgrasp/ops.hpp"
#include "tfgrasp/random.hpp"
#include "tfgrasp/swin.hpp"
#include "tfgrasp/verify/oracles.hpp"

namespace tfgrasp::verify {
namespace {

constexpr double kPi = std::numbers::pi;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

Tensor<double> random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double lo = -1, double hi = 1) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(v), requires_grad);
}

// sum(out * r) with a fixed random r, so every output element matters.
Tensor<double> project_out(const Tensor<double>& out, std::uint64_t seed) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return sum(mul(out, random_tensor(out.shape(), rng, false)));
}

IndexMap random_map(Index size, Index range, Rng& rng) {
  auto m = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(size));
  for (auto& v : *m) v = static_cast<Index>(rng.below(static_cast<std::uint64_t>(range)));
  return m;
}

struct GradCase {
  std::string name;
  // Builds inputs and the loss for one seed.
  std::function<std::pair<std::vector<Tensor<double>>, LossFn>(std::uint64_t)> build;
};

AttentionParams<double> attention_from(std::span<const Tensor<double>> in, std::size_t at) {
  return {in[at], in[at + 1], in[at + 2], in[at + 3], in[at + 4], in[at + 5]};
}

std::vector<Tensor<double>> random_attention(Index c, Index heads, Index window, Rng& rng) {
  const Index table = (2 * window - 1) * (2 * window - 1);
  return {random_tensor({c, c}, rng), random_tensor({c, c}, rng), random_tensor({c, c}, rng),
          random_tensor({c, c}, rng), random_tensor({c}, rng),    random_tensor({heads, table}, rng)};
}

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  auto unary = [&](const std::string& name, Shape shape, std::function<Tensor<double>(const Tensor<double>&)> op) {
    cases.push_back({name, [shape, op](std::uint64_t seed) {
                       Rng rng(seed);
                       std::vector<Tensor<double>> in{random_tensor(shape, rng, true, -2, 2)};
                       LossFn f = [op, seed](std::span<const Tensor<double>> x) { return project_out(op(x[0]), seed); };
                       return std::make_pair(in, f);
                     }});
  };
  auto binary = [&](const std::string& name, Shape a, Shape b,
                    std::function<Tensor<double>(const Tensor<double>&, const Tensor<double>&)> op) {
    cases.push_back({name, [a, b, op](std::uint64_t seed) {
                       Rng rng(seed);
                       std::vector<Tensor<double>> in{random_tensor(a, rng), random_tensor(b, rng)};
                       LossFn f = [op, seed](std::span<const Tensor<double>> x) {
                         return project_out(op(x[0], x[1]), seed);
                       };
                       return std::make_pair(in, f);
                     }});
  };

  binary("matmul", {2, 3, 4}, {4, 5}, [](auto& a, auto& b) { return matmul(a, b); });
  binary("matmul_batched", {2, 3, 4}, {2, 4, 3}, [](auto& a, auto& b) { return matmul(a, b); });
  binary("matmul_transposed", {2, 3, 4}, {2, 5, 4}, [](auto& a, auto& b) { return matmul_transposed(a, b); });
  cases.push_back({"linear", [](std::uint64_t seed) {
                     Rng rng(seed);
                     std::vector<Tensor<double>> in{random_tensor({3, 4}, rng), random_tensor({4, 5}, rng),
                                                    random_tensor({5}, rng)};
                     LossFn f = [seed](std::span<const Tensor<double>> x) {
                       return project_out(linear(x[0], x[1], x[2]), seed);
                     };
                     return std::make_pair(in, f);
                   }});
  binary("add_broadcast", {2, 3, 4}, {4}, [](auto& a, auto& b) { return add(a, b); });
  binary("sub", {2, 3, 4}, {2, 3, 4}, [](auto& a, auto& b) { return sub(a, b); });
  binary("mul_broadcast", {2, 3, 4}, {3, 4}, [](auto& a, auto& b) { return mul(a, b); });
  unary("scale", {3, 5}, [](auto& x) { return scale(x, 1.7); });
  unary("gelu", {4, 6}, [](auto& x) { return gelu(x); });
  unary("sigmoid", {4, 6}, [](auto& x) { return sigmoid(x); });
  unary("softmax_last", {3, 4, 5}, [](auto& x) { return softmax(x, -1); });
  unary("softmax_first", {3, 4, 5}, [](auto& x) { return softmax(x, 0); });
  cases.push_back({"layer_norm", [](std::uint64_t seed) {
                     Rng rng(seed);
                     std::vector<Tensor<double>> in{random_tensor({4, 6}, rng, true, -2, 2), random_tensor({6}, rng),
                                                    random_tensor({6}, rng)};
                     LossFn f = [seed](std::span<const Tensor<double>> x) {
                       return project_out(layer_norm(x[0], x[1], x[2]), seed);
                     };
                     return std::make_pair(in, f);
                   }});
  cases.push_back({"strided_conv2d", [](std::uint64_t seed) {
                     Rng rng(seed);
                     std::vector<Tensor<double>> in{random_tensor({1, 2, 4, 4}, rng), random_tensor({3, 2, 2, 2}, rng),
                                                    random_tensor({3}, rng)};
                     LossFn f = [seed](std::span<const Tensor<double>> x) {
                       return project_out(strided_conv2d(x[0], x[1], x[2], 2), seed);
                     };
                     return std::make_pair(in, f);
                   }});
  unary("permute", {2, 3, 4}, [](auto& x) { return permute(x, {2, 0, 1}); });
  binary("concat", {2, 3}, {2, 2}, [](auto& a, auto& b) {
    const Tensor<double> parts[] = {a, b};
    return concat<double>(parts, -1);
  });
  cases.push_back({"gather", [](std::uint64_t seed) {
                     Rng rng(seed);
                     std::vector<Tensor<double>> in{random_tensor({3, 4}, rng)};
                     IndexMap map = random_map(20, 12, rng);
                     LossFn f = [seed, map](std::span<const Tensor<double>> x) {
                       return project_out(gather(x[0], map, Shape{4, 5}), seed);
                     };
                     return std::make_pair(in, f);
                   }});
  cases.push_back({"gather_rows", [](std::uint64_t seed) {
                     Rng rng(seed);
                     std::vector<Tensor<double>> in{random_tensor({4, 3}, rng)};
                     IndexMap rows = random_map(6, 4, rng);
                     LossFn f = [seed, rows](std::span<const Tensor<double>> x) {
                       return project_out(gather_rows(x[0], rows), seed);
                     };
                     return std::make_pair(in, f);
                   }});
  unary("sum", {3, 4}, [](auto& x) { return sum(mul(x, x)); });
  unary("mean", {3, 4}, [](auto& x) { return mean(mul(x, x)); });
  binary("mse_loss", {2, 4, 3}, {2, 4, 3}, [](auto& a, auto& b) { return mse_loss(a, b); });

  cases.push_back({"masked_mhsa", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const WindowLayout layout = make_window_layout(4, 4, 2, 1);
                     std::vector<Tensor<double>> in{random_tensor({4, 4, 4}, rng)};
                     for (auto& t : random_attention(4, 2, 2, rng)) in.push_back(t);
                     LossFn f = [seed, layout](std::span<const Tensor<double>> x) {
                       return project_out(mhsa(x[0], attention_from(x, 1), layout.relative_index, layout.mask), seed);
                     };
                     return std::make_pair(in, f);
                   }});
  cases.push_back({"swin_block", [](std::uint64_t seed) {
                     Rng rng(seed);
                     ParamSet<double> set(seed);
                     register_swin_block(set, "b", 4, 2, 2);
                     std::vector<Tensor<double>> in{random_tensor({16, 4}, rng)};
                     for (const auto& t : set.tensors()) {
                       auto r = random_tensor(t.shape(), rng, true, -0.5, 0.5);
                       in.push_back(r);
                     }
                     const auto names = set.names();
                     const WindowLayout local = make_window_layout(4, 4, 2, 0);
                     const WindowLayout shifted = make_window_layout(4, 4, 2, 1);
                     LossFn f = [seed, names, local, shifted](std::span<const Tensor<double>> x) {
                       ParamSet<double> p;
                       for (std::size_t i = 0; i < names.size(); ++i) p.add(names[i], x[i + 1]);
                       return project_out(swin_block(x[0], swin_block_params(p, "b"), local, shifted), seed);
                     };
                     return std::make_pair(in, f);
                   }});
  cases.push_back({"patch_merge", [](std::uint64_t seed) {
                     Rng rng(seed);
                     std::vector<Tensor<double>> in{random_tensor({16, 2}, rng), random_tensor({8, 4}, rng)};
                     LossFn f = [seed](std::span<const Tensor<double>> x) {
                       return project_out(patch_merge(x[0], x[1], 4, 4), seed);
                     };
                     return std::make_pair(in, f);
                   }});
  cases.push_back({"patch_expand", [](std::uint64_t seed) {
                     Rng rng(seed);
                     std::vector<Tensor<double>> in{random_tensor({8, 4}, rng), random_tensor({4, 8}, rng)};
                     LossFn f = [seed](std::span<const Tensor<double>> x) {
                       return project_out(patch_expand(x[0], x[1], 2, 4), seed);
                     };
                     return std::make_pair(in, f);
                   }});
  return cases;
}

}  // namespace

std::string format_outcome(const PropertyOutcome& o) {
  std::string line = (o.pass ? "PASS " : "FAIL ") + o.name;
  if (!o.detail.empty()) line += " " + o.detail;
  if (!o.pass && o.seed >= 0) line += " seed=" + std::to_string(o.seed);
  return line;
}

bool run_gradcheck_suite(const Reporter& report, const GradcheckOptions& options) {
  bool all = true;
  for (const auto& c : gradient_cases()) {
    PropertyOutcome o{"gradcheck/" + c.name, true, "", -1};
    double worst = 0;
    for (int s = 0; s < options.seeds; ++s) {
      auto [inputs, f] = c.build(static_cast<std::uint64_t>(s));
      const GradcheckResult r = gradcheck(f, inputs);
      if (r.max_error > worst) worst = r.max_error;
      if (r.max_error >= kGradTolerance && o.pass) {
        o.pass = false;
        o.seed = s;
        o.detail = "at " + r.worst;
      }
    }
    o.detail = "max_rel_error=" + num(worst) + (o.detail.empty() ? "" : " " + o.detail);
    all = all && o.pass;
    report(o);
  }
  if (!options.include_model) return all;

  PropertyOutcome o{"gradcheck/full_model", true, "", -1};
  double worst = 0;
  const Index channel_options[] = {1, 3, 4};
  for (int s = 0; s < options.seeds; ++s) {
    ModelConfig config;
    config.in_channels = channel_options[s % 3];
    config.use_skips = s % 2 == 0;
    const auto seed = static_cast<std::uint64_t>(s);
    ParamSet<double> params = init_model<double>(config, seed);
    Rng rng(mix_seed(seed, 17));
    const Tensor<double> image =
        random_tensor({1, config.in_channels, config.resolution, config.resolution}, rng, false);
    const auto names = params.names();
    LossFn f = [&](std::span<const Tensor<double>> x) {
      ParamSet<double> p;
      for (std::size_t i = 0; i < names.size(); ++i) p.add(names[i], x[i]);
      return project_out(forward(image, p, config), seed);
    };
    const GradcheckResult r = directional_gradcheck(f, params.tensors(), seed);
    worst = std::max(worst, r.max_error);
    if (r.max_error >= kGradTolerance && o.pass) {
      o.pass = false;
      o.seed = s;
    }
  }
  o.detail = "max_rel_error=" + num(worst) + " directional";
  report(o);
  return all && o.pass;
}

bool run_attention_suite(const Reporter& report, int seeds) {
  constexpr Index kGrid = 14, kWindow = 7, kDim = 16, kHeads = 2;
  bool all = true;
  for (const Index shift : {Index{0}, kWindow / 2}) {
    PropertyOutcome eq{shift == 0 ? "attn/window_equals_dense_s0" : "attn/window_equals_dense_shifted", true, "", -1};
    PropertyOutcome masked{"attn/masked_weight_bound", true, "", -1};
    PropertyOutcome pattern{"attn/mask_pattern_matches_dense", true, "", -1};
    double worst_diff = 0, worst_masked = 0;
    for (int s = 0; s < seeds; ++s) {
      Rng rng(mix_seed(static_cast<std::uint64_t>(s), 3, static_cast<std::uint64_t>(shift)));
      DenseAttentionParams dp;
      dp.channels = kDim;
      dp.heads = kHeads;
      const Index table = (2 * kWindow - 1) * (2 * kWindow - 1);
      auto fill = [&](std::vector<double>& v, Index n, double scale) {
        v.resize(static_cast<std::size_t>(n));
        for (auto& x : v) x = rng.uniform(-scale, scale);
      };
      fill(dp.w_q, kDim * kDim, 0.5);
      fill(dp.w_k, kDim * kDim, 0.5);
      fill(dp.w_v, kDim * kDim, 0.5);
      fill(dp.w_o, kDim * kDim, 0.5);
      fill(dp.b_o, kDim, 0.5);
      fill(dp.bias_table, kHeads * table, 1.0);
      std::vector<double> x;
      fill(x, kGrid * kGrid * kDim, 1.0);
      const DenseAttentionResult dense = dense_window_attention(x, kGrid, kGrid, kWindow, shift, dp);

      auto as_float = [](const std::vector<double>& v, Shape shape) {
        return Tensor<float>(std::move(shape), std::vector<float>(v.begin(), v.end()));
      };
      const AttentionParams<float> ap{as_float(dp.w_q, {kDim, kDim}), as_float(dp.w_k, {kDim, kDim}),
                                      as_float(dp.w_v, {kDim, kDim}), as_float(dp.w_o, {kDim, kDim}),
                                      as_float(dp.b_o, {kDim}),       as_float(dp.bias_table, {kHeads, table})};
      const WindowLayout layout = make_window_layout(kGrid, kGrid, kWindow, shift);
      Tensor<float> weights;
      const Tensor<float> out = window_attention(as_float(x, {kGrid * kGrid, kDim}), ap, layout, &weights);
      double diff = 0;
      for (std::size_t i = 0; i < x.size(); ++i) diff = std::max(diff, std::abs(out.data()[i] - dense.output[i]));
      worst_diff = std::max(worst_diff, diff);
      if (diff >= kAttentionTolerance && eq.pass) {
        eq.pass = false;
        eq.seed = s;
      }

      // Weights come back per window: [windows, heads, T, T].
      const Index t = layout.tokens(), n = kGrid * kGrid;
      const auto& to = *layout.to_windows;
      for (Index w = 0; w < layout.num_windows(); ++w) {
        for (Index a = 0; a < t; ++a) {
          for (Index b = 0; b < t; ++b) {
            const bool masked_pair = !layout.mask.empty() && layout.mask[(w * t + a) * t + b] != 0;
            const Index src_a = to[w * t + a], src_b = to[w * t + b];
            if (dense.allowed[src_a * n + src_b] == masked_pair && pattern.pass) {
              pattern.pass = false;
              pattern.seed = s;
            }
            if (!masked_pair) continue;
            for (Index h = 0; h < kHeads; ++h) {
              const double v = weights.data()[((w * kHeads + h) * t + a) * t + b];
              worst_masked = std::max(worst_masked, v);
              if (v >= kMaskedWeightBound && masked.pass) {
                masked.pass = false;
                masked.seed = s;
              }
            }
          }
        }
      }
    }
    eq.detail = "max_abs_diff=" + num(worst_diff);
    report(eq);
    all = all && eq.pass;
    if (shift > 0) {
      masked.detail = "max_masked_weight=" + num(worst_masked);
      report(masked);
      report(pattern);
      all = all && masked.pass && pattern.pass;
    }
  }
  return all;
}

bool run_geometry_suite(const Reporter& report) {
  bool all = true;
  auto check = [&](const std::string& name, bool pass, const std::string& detail = "", std::int64_t seed = -1) {
    report({name, pass, detail, pass ? -1 : seed});
    all = all && pass;
  };

  const GraspRect unit{0.5, 0.5, 0, 1, 1};
  check("jaccard/identical", std::abs(jaccard(unit, unit) - 1.0) < 1e-12, "J=" + num(jaccard(unit, unit)));
  const GraspRect far{10.5, 0.5, 0, 1, 1};
  check("jaccard/disjoint", jaccard(unit, far) == 0.0, "J=" + num(jaccard(unit, far)));
  const GraspRect offset{1.0, 0.5, 0, 1, 1};
  const double third = jaccard(unit, offset);
  check("jaccard/offset_squares_one_third", std::abs(third - 1.0 / 3.0) < 1e-12, "J=" + num(third));

  double worst = 0, worst_sym = 0;
  std::int64_t bad_seed = -1;
  for (int s = 0; s < 100; ++s) {
    Rng rng(mix_seed(static_cast<std::uint64_t>(s), 5));
    const GraspRect a{rng.uniform(40, 60), rng.uniform(40, 60), rng.uniform(-kPi / 2, kPi / 2), rng.uniform(10, 50),
                      rng.uniform(5, 30)};
    const GraspRect b{a.x + rng.uniform(-15, 15), a.y + rng.uniform(-15, 15), rng.uniform(-kPi / 2, kPi / 2),
                      rng.uniform(10, 50), rng.uniform(5, 30)};
    const double exact = jaccard(a, b);
    const double sampled = sampled_jaccard(a, b, 1000000, static_cast<std::uint64_t>(s));
    const double d = std::abs(exact - sampled);
    if (d > worst) worst = d;
    if (d >= kSampledJaccardTolerance && bad_seed < 0) bad_seed = s;
    worst_sym = std::max(worst_sym, std::abs(exact - jaccard(b, a)));
  }
  check("jaccard/sampled_area_oracle", bad_seed < 0, "pairs=100 max_abs_diff=" + num(worst), bad_seed);
  check("jaccard/symmetry", worst_sym <= 1e-12, "max_abs_diff=" + num(worst_sym));

  double worst_rt = 0;
  Rng rng(11);
  for (int i = 0; i < 10000; ++i) {
    const double theta = normalize_angle(rng.uniform(-kPi / 2, kPi / 2));
    const Eigen::Vector2d code = encode_angle(theta);
    worst_rt = std::max(worst_rt, std::abs(decode_angle(code.x(), code.y()) - theta));
  }
  const Eigen::Vector2d top = encode_angle(kPi / 2);
  worst_rt = std::max(worst_rt, std::abs(decode_angle(top.x(), top.y()) - kPi / 2));
  check("angle/codec_round_trip", worst_rt <= kAngleRoundTripTolerance, "samples=10001 max_abs_diff=" + num(worst_rt));

  // Success fixture. Squares of side 5 offset by d along x have
  // J = (5 - d) / (5 + d), which is exactly 0.25 at d = 3.
  const GraspRect truth{10, 10, 0, 5, 5};
  auto shifted = [&](double d, double theta) { return GraspRect{10 + d, 10, theta, 5, 5}; };
  const GraspRect t1[] = {truth};
  struct Case {
    const char* name;
    GraspRect pred;
    bool expect;
  };
  const double deg = kPi / 180;
  const Case cases[] = {
      {"jaccard_above_quarter", shifted(2.9, 0), true},
      {"jaccard_exactly_quarter", shifted(3.0, 0), false},
      {"jaccard_below_quarter", shifted(3.1, 0), false},
      {"angle_29deg", shifted(0, 29 * deg), true},
      {"angle_exactly_30deg", shifted(0, kMaxAngleError), true},
      {"angle_31deg", shifted(0, 31 * deg), false},
      {"angle_29deg_low_jaccard", shifted(3.5, 29 * deg), false},
      {"angle_periodic_89_vs_minus_89", GraspRect{10, 10, 89 * deg, 5, 5}, true},
  };
  const GraspRect periodic_truth[] = {GraspRect{10, 10, -89 * deg, 5, 5}};
  bool fixture_ok = true;
  std::string failed;
  for (const auto& c : cases) {
    const bool periodic = std::string(c.name).find("periodic") != std::string::npos;
    const bool got = is_success(c.pred, periodic ? std::span<const GraspRect>(periodic_truth) : std::span<const GraspRect>(t1));
    if (got != c.expect) {
      fixture_ok = false;
      failed += std::string(" ") + c.name;
    }
  }
  check("metric/threshold_fixture", fixture_ok, fixture_ok ? "cases=8" : "failed:" + failed);
  return all;
}

std::vector<std::string> suite_names() { return {"gradcheck", "attn-oracle", "geometry"}; }

bool run_suite(const std::string& name, std::ostream& out) {
  const Reporter print = [&out](const PropertyOutcome& o) { out << format_outcome(o) << "\n" << std::flush; };
  if (name == "gradcheck") return run_gradcheck_suite(print);
  if (name == "attn-oracle") return run_attention_suite(print);
  if (name == "geometry") return run_geometry_suite(print);
  throw ConfigError("unknown verify suite '" + name + "' (expected gradcheck, attn-oracle or geometry)");
}

}  // namespace tfgrasp::verify
