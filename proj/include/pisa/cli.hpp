#pragma once

#include <string>
#include <vector>

namespace pisa {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNumerical = 4,
};

// Entry point of the pisa tool; args excludes the program name.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace pisa
