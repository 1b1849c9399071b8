#include <excusum/error.hpp>

namespace excusum {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidArgument:
        return "InvalidArgument";
    case ErrorCode::RankDeficient:
        return "RankDeficient";
    case ErrorCode::NotConverged:
        return "NotConverged";
    case ErrorCode::Degenerate:
        return "Degenerate";
    case ErrorCode::EmptySelection:
        return "EmptySelection";
    case ErrorCode::SingularInformation:
        return "SingularInformation";
    case ErrorCode::ZeroScoreVariance:
        return "ZeroScoreVariance";
    case ErrorCode::DimensionMismatch:
        return "DimensionMismatch";
    case ErrorCode::StepAfterStop:
        return "StepAfterStop";
    case ErrorCode::CorruptCache:
        return "CorruptCache";
    case ErrorCode::Parse:
        return "Parse";
    case ErrorCode::Io:
        return "Io";
    }
    return "Unknown";
}

}  // namespace excusum
