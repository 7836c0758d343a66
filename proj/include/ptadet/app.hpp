#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ptadet {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailure = 1;
inline constexpr int kExitConfigError = 2;

inline constexpr const char* kVersion = "0.1.0";

/// Command-line entry point. `args` excludes the program name.
///
///   ptadet [--preset desk|paper] [--config FILE] [--seed N] [--out DIR] [--set key=value]...
///          check | gradcheck | overfit | eval | ablate | generate | replay  [command options]
///
/// Every command except replay writes DIR/manifest.jsonl before its results.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ptadet
