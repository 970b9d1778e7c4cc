#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace todrr::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitInvariant = 3;

// Runs one `todrr` invocation. args[0] is the program name. Data goes to
// files (or `out` when a subcommand prints), logs to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace todrr::cli
