#pragma once

#include <excusum/error.hpp>

#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace excusum {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
    EXIT_OK = 0,
    EXIT_INPUT = 2,     ///< I/O, parse or argument errors
    EXIT_NUMERIC = 3,   ///< solver or numerical failures
    EXIT_SELECTION = 4, ///< nothing selected
};

[[nodiscard]] int exit_code_for(ErrorCode code) noexcept;

/// Environment variable naming the default critical value cache.
inline constexpr const char* CRITVAL_CACHE_ENV = "EXCUSUM_CRITVAL_CACHE";

/// Runs the tool with `args` (without the program name). `in` backs `--stream -`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, std::istream& in);

}  // namespace excusum
