#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "abm/config.hpp"

namespace abm {

/// Exit codes of run_cli.
inline constexpr int kExitSuccess = 0;
inline constexpr int kExitCriteria = 1;  // a checked property failed
inline constexpr int kExitUsage = 2;     // bad arguments, missing files, I/O failure

/// Runs one command line; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Settings a command line resolves to, applied in order: defaults, --config file,
/// ABM_DATA_DIR, flags. Throws Error on bad input, including a help request.
RunConfig resolve_config(const std::vector<std::string>& args);

/// --help text of one subcommand.
std::string command_help(Command command);

}  // namespace abm
