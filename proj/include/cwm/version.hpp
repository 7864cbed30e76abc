#pragma once

namespace cwm {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace cwm
