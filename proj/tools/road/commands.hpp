#pragma once

#include <ostream>

namespace road::cli {

/// Exit statuses of the road tool.
inline constexpr int k_exit_ok = 0;
inline constexpr int k_exit_failure = 1;
inline constexpr int k_exit_config = 2;

/// Parses argv and runs one command. Human-readable output goes to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Makes a running optimize or resume stop after the current iteration (set from a signal handler).
void request_interrupt() noexcept;

}  // namespace road::cli
