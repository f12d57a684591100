#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace drtl::cli {

/// Process exit codes.
enum ExitCode : int { kOk = 0, kInternal = 1, kUsage = 2, kData = 3, kNumeric = 4 };

/// Runs one command line (`args` excludes the program name). Normal output goes
/// to `out`; failures print a single `error: <kind>: <message>` line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace drtl::cli
