#pragma once

namespace cmm {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace cmm
