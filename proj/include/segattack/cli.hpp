#pragma once

#include <iosfwd>

#include "segattack/error.hpp"

namespace segattack::cli {

// Process exit codes shared by every command.
enum ExitCode : int {
  kOk = 0,
  kConfigError = 2,
  kModelError = 3,
  kNumericError = 4,
  kAllCellsFailed = 5,
};

int exit_code_for(ErrorKind kind);

// Entry point of the segattack tool; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace segattack::cli
