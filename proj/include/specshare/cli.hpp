#pragma once

#include <iosfwd>

namespace specshare {

enum ExitCode : int {
  kExitOk = 0,
  kExitInfeasible = 1,  // the model says no
  kExitUsage = 2,
  kExitFault = 3,  // an invariant broke
};

// Entry point of the command-line tool; everything it prints goes to out/err.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace specshare
