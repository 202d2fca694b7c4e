#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace kiln::cli {

/// Exit codes of run().
inline constexpr int kOk = 0;
inline constexpr int kInvalid = 1;  // bad flags, configuration or input data
inline constexpr int kFailed = 2;   // runtime, numeric or I/O failure

/// Runs one command line (without the program name). Results go to files
/// and `out`; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Every subcommand path, such as "train" or "export geojson".
std::vector<std::string> subcommands();

}  // namespace kiln::cli
