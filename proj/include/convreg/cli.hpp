#pragma once

#include <string>
#include <vector>

namespace convreg {

/// Command-line front end (simulate / fit / eval / experiment). Takes the
/// argument list without the program name and returns the process exit code:
/// 0 when every requested output file was written.
int run_cli(const std::vector<std::string>& args);

}  // namespace convreg
