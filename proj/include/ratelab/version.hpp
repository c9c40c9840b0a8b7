#pragma once

namespace ratelab {

inline constexpr const char* kVersion = "ratelab 0.1.0";

}  // namespace ratelab
