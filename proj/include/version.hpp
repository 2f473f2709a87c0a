#pragma once

namespace pmdi {
inline constexpr const char* kVersion = "0.1.0";
}
