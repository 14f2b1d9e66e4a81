#pragma once

// The wsx command-line front end, callable in-process for tests.

#include <iosfwd>
#include <string>
#include <vector>

namespace wsx::cli {

/// Runs one command. `args` excludes the program name.
/// Returns 0 on success, 1 on runtime failure and 2 on usage errors.
int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace wsx::cli
