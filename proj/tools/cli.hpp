#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace i2i::cli {

// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,  // grad-check failures and errors outside the table below
  kConfigError = 2,
  kIoError = 3,
  kNumericError = 4,
  kCheckpointError = 5,
};

/// Runs the `i2i` command line. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace i2i::cli
