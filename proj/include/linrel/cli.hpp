#pragma once

#include <string>
#include <vector>

namespace linrel {

/// Runs one CLI command (args exclude the program name). Exit codes: 0 on
/// success, 1 on validation or runtime failure (message names the field),
/// 2 on usage errors. Progress goes to stderr; results go to files.
int run_cli(const std::vector<std::string>& args);

} // namespace linrel
