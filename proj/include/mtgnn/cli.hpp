#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "mtgnn/config.hpp"

namespace mtgnn {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitVerificationFailed = 1,
  kExitUsage = 2,
  kExitRuntime = 3,
};

/// Entry point of the `mtgnn` tool. Subcommands: train, eval, forecast,
/// export-graph, gradcheck, synth.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

/// Config file (or defaults when `path` is empty), then `key=value`
/// overrides in order, then the seed when non-negative.
RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides,
                         long long seed);

}  // namespace mtgnn
