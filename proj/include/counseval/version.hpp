#pragma once

namespace counseval {

inline constexpr const char* kVersion = "0.1.0";

} // namespace counseval
