#pragma once

#include <string>
#include <vector>

namespace dtta::cli {

/// Parses `args` (without the program name) and runs one subcommand.
/// Returns the process exit code: 0 success, 1 usage/config, 2 data,
/// 3 numerical fault.
int run(const std::vector<std::string>& args);

}  // namespace dtta::cli
