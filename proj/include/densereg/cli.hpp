#pragma once

#include <iosfwd>

namespace densereg::cli {

/// Process exit codes. Stable; documented in the README.
enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kUsage = 2,
  kConfig = 3,
  kData = 4,
  kNumeric = 5,
  kCheckpoint = 6,
};

/// Entry point of the `densereg` binary: parses `argv`, runs one subcommand
/// (generate, train, sweep, bench, eval, predict) and maps failures to an
/// ExitCode. Human-readable output goes to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace densereg::cli
