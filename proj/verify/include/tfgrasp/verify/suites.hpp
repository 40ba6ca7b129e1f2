#pragma once

// Property suites run by `tfgrasp verify` and the acceptance checks. Each
// property reports pass/fail with the worst value seen and, on failure, the
// seed that produced it.

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace tfgrasp::verify {

struct PropertyOutcome {
  std::string name;
  bool pass = false;
  std::string detail;
  std::int64_t seed = -1;  // failing seed, -1 when not seeded
};

using Reporter = std::function<void(const PropertyOutcome&)>;

// Tolerances.
inline constexpr double kGradTolerance = 1e-3;
inline constexpr double kAttentionTolerance = 1e-5;
inline constexpr double kMaskedWeightBound = 1e-7;
inline constexpr double kSampledJaccardTolerance = 2e-3;
inline constexpr double kAngleRoundTripTolerance = 1e-9;

struct GradcheckOptions {
  int seeds = 20;
  bool include_model = true;
};

// Central differences in double for every differentiable op, the attention
// and block composites, and the full desk-scale model (directional).
bool run_gradcheck_suite(const Reporter& report, const GradcheckOptions& options = {});
// Windowed vs dense attention at 14 x 14, window 7, width 16, with and
// without shift, plus the masked-weight bound.
bool run_attention_suite(const Reporter& report, int seeds = 20);
// Jaccard analytic cases and sampled oracle, codec round trip, success
// thresholds.
bool run_geometry_suite(const Reporter& report);

std::vector<std::string> suite_names();
// Prints "PASS <name> <detail>" / "FAIL <name> <detail> seed=<s>" lines.
// Throws ConfigError for an unknown suite.
bool run_suite(const std::string& name, std::ostream& out);

// Shared line format of the reporters above.
std::string format_outcome(const PropertyOutcome& outcome);

}  // namespace tfgrasp::verify
