#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kmbart {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// Runs the command line (args excludes the program name). Usage errors
// return 1, data and validation errors return 2; messages go to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kmbart
