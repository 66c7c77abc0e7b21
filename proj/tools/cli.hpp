#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mpq::cli {

/// Runs one invocation; `args` excludes the program name. Exit codes:
/// 0 success, 1 usage, 2 data or validation, 3 internal.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mpq::cli
