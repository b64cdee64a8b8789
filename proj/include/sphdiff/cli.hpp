#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sphdiff {

// Process exit codes.
enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitConfigError = 2, kExitIoError = 3 };

// Entry point of the `sphdiff` tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace sphdiff
