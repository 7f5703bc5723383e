#pragma once

namespace mtunet {

inline constexpr const char* kVersion = "0.1.0";

inline const char* version_string() { return "mtunet 0.1.0"; }

}  // namespace mtunet
