#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "t4v/error.hpp"

namespace t4v::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Exit code for a library error: bad arguments 1, bad data or files 2, numeric failure 3.
int exit_code_for(Errc code) noexcept;

/// Runs one command line (args exclude the program name). Messages go to `out`, errors to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv);

}  // namespace t4v::cli
