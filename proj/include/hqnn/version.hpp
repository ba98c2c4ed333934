#pragma once

#include <cstdint>

namespace hqnn {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr std::uint32_t kCheckpointVersion = 1;

} // namespace hqnn
