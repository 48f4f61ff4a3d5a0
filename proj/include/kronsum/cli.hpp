#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace kronsum::cli {

// Exit codes: 0 success, 2 usage/validation, 3 data error, 4 numerical failure.
enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4 };

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kronsum::cli
