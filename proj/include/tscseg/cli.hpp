#pragma once

#include "tscseg/error.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace tscseg {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitRuntime = 2, kExitThreshold = 3 };

/// Input problems map to kExitValidation, everything else to kExitRuntime.
int exit_code_for(ErrorCode code);

/// Subcommands: generate, train, segment, stream, eval, bench.
/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace tscseg
