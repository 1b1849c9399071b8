#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace excusum {

/// Failure categories shared by the library and the command-line front end.
enum class ErrorCode {
    InvalidArgument,
    RankDeficient,
    NotConverged,
    Degenerate,
    EmptySelection,
    SingularInformation,
    ZeroScoreVariance,
    DimensionMismatch,
    StepAfterStop,
    CorruptCache,
    Parse,
    Io,
};

[[nodiscard]] std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), m_code(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return m_code; }

private:
    ErrorCode m_code;
};

}  // namespace excusum
