#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace uad::cli {

enum ExitCode : int {
    exit_ok = 0,
    exit_usage = 1,        // bad arguments or configuration
    exit_prerequisite = 2, // an upstream artifact is missing
    exit_numerical = 3     // divergence or other non-finite result
};

/// Runs `uadmap <args...>` in-process. `args` excludes the program name.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace uad::cli
