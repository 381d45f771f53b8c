#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace psmedit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one command. `args` excludes the program name. Progress goes to
/// `out`; a failure prints a single line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace psmedit::cli
