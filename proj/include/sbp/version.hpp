#pragma once

namespace sbp {
inline constexpr const char* kVersion = "0.1.0";
}
