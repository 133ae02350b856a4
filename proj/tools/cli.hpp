#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ncd::cli {

/// Runs one ncdc invocation. `args` excludes the program name. Returns the
/// exit code: 0 success, 1 user error, 2 internal error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ncd::cli
