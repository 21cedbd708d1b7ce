#pragma once

// Command-line front end: gen-data, train, solve, schwarz-demo, analyze.

#include <iosfwd>

namespace mosaic::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumerical = 4;

/// Parses arguments and runs one subcommand. Returns the process exit code;
/// errors are reported on `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mosaic::cli
