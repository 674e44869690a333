#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hbm::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kDataError = 3,
  kTrainingError = 4,
  kReplayMismatch = 5,
};

// Runs one invocation; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hbm::cli
