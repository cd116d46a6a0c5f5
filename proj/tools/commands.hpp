#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dpt::cli {

// Runs one `dpt` invocation (args exclude the program name). Exit codes: 0
// success, 1 usage, 2 data, 3 internal. Errors go to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Long flag names offered by the command line, without leading dashes.
std::vector<std::string> cli_flags();

// --fixed-k <-> fixed_k
std::string flag_of(const std::string& key);

}  // namespace dpt::cli
