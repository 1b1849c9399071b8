#pragma once

#include <string>

namespace excusum {

/// Shortest decimal that round-trips to the same double; "inf", "-inf" and "nan" otherwise.
[[nodiscard]] std::string format_double(double value);

}  // namespace excusum
