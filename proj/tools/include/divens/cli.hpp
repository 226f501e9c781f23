#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace divens {

/// Exit codes of the divens command line.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitRuntime = 2,
  kExitFormat = 3,
  kExitTheory = 4,
};

/// Runs the CLI on `args` (without the program name). Normal output goes to
/// `out`; errors go to `err` as single-line JSON {code, message, context}.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_main(int argc, char** argv);

}  // namespace divens
