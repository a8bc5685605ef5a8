#pragma once

namespace pacr {

inline constexpr const char* kToolName = "pacr";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace pacr
