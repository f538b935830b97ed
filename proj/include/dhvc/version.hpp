#pragma once

namespace dhvc {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dhvc
