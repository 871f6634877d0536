#pragma once

#include <iosfwd>

namespace tcq::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;

// Parses argv and runs one subcommand. Primary output goes to `out`,
// diagnostics and progress to `err`.
int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace tcq::cli
