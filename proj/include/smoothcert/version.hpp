#pragma once

namespace smoothcert {

inline constexpr const char* kVersion = "smoothcert 0.1.0";

}  // namespace smoothcert
