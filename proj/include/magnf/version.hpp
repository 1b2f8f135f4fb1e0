#pragma once

namespace magnf {
inline constexpr const char* kVersion = "0.1.0";
}
