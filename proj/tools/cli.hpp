#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dipir::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kRemoteUnavailable = 3, kNumericalFailure = 4 };

/// Entry point shared by the executable and the tests. args[0] is the program name.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

}  // namespace dipir::cli
