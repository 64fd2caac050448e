#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace sroi::cli {

enum ExitCode : int {
    kOk = 0,
    kConfigError = 2,
    kDegenerateRegion = 3,
    kInsufficientMatches = 4,
};

// Runs one subcommand. args[0] is the program name, as in argv.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sroi::cli
