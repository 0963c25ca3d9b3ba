#pragma once

namespace dpg {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace dpg
