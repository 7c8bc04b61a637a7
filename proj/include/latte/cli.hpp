#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace latte::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kValidationError = 2;
inline constexpr int kDivergence = 3;

// Runs one command line (args excludes the program name). Diagnostics go to
// `err`, short results to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace latte::cli
