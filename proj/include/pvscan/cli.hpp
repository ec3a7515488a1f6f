#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace pvscan::cli {

/// Runs one `pvscan` command line (args exclude the program name). Machine
/// readable summaries go to `out`, diagnostics to `err`. Returns the exit
/// status: 0 success, 1 operational failure, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

/// Built-in configuration; every key a config file may set.
nlohmann::json default_config();

/// Lowercase, alphanumerics kept, everything else collapsed to '-'.
std::string slug(const std::string& name);

}  // namespace pvscan::cli
