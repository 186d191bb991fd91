#pragma once

#include <iosfwd>
#include <string>

#include "cli/common.hpp"

namespace knitsim::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;      // runtime failure (IO, numerics, resources)
inline constexpr int kExitUsage = 2;      // bad flags or config
inline constexpr int kExitThreshold = 3;  // success fraction below threshold, or verify mismatch

struct CommandResult {
  Table table;
  json diagnostics;  // nested per-trial data, written next to the CSV when non-null
  int status = kExitOk;
  std::string summary;
};

// Fills defaults and validates a command config. The result is canonical:
// equal inputs give byte-identical dumps. Throws UsageError.
json normalize_config(const json& raw);

// Runs a normalized config. Output depends only on the config.
CommandResult execute(const json& config, int threads = 1);

// Full command line entry point.
int run_main(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace knitsim::cli
