#pragma once

#include "pastel/common/error.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace pastel::cli {

/// Process exit status for each failure class; 0 is success.
int exit_code(ErrorCategory category) noexcept;

/// One-line machine-parseable failure report (no trailing newline).
std::string error_line(ErrorCategory category, const std::string& message);

/// Runs the command line. Reports go to `out`, progress and errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace pastel::cli
