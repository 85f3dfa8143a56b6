#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gptgnn::cli {

/// Runs one command line (without the program name) and returns the exit
/// code: 0 ok, 1 other failure, 2 config error, 3 data error, 4 numerical
/// failure. Errors are written to `err` as one JSON object.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gptgnn::cli
