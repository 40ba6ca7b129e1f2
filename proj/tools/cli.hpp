#pragma once

// The `tfgrasp` command line: synth-gen, train, eval, predict, verify,
// crossval, ablate and convert-depth.

#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace tfgrasp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Runs one command line (without the program name) and returns the exit
// code: 0 success, 1 runtime or verification failure, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Flat "key = value" lines. Blank lines and lines starting with '#' are
// skipped; anything else without '=' or with an empty key throws
// ConfigError.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);

}  // namespace tfgrasp::cli
