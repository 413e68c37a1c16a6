#pragma once

#include <iosfwd>

namespace ltm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;

/// Entry point of the `ltm` tool: train, sweep-orderings, sample, compare and
/// fillin. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ltm
