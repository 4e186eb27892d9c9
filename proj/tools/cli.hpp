#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dora::cli {

inline constexpr const char* kToolVersion = "0.3.0";

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericalError = 3 };

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dora::cli
