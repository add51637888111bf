#pragma once

#include <cstdint>

namespace pnet {

// Reserved vocabulary ids. Id 0 marks sequence boundaries on both sides:
// it shifts the decoder input as BOS and terminates generation as EOS.
inline constexpr std::int64_t kBosId = 0;
inline constexpr std::int64_t kEosId = 0;
inline constexpr std::int64_t kPadId = 1;
inline constexpr std::int64_t kMaskId = 2;
inline constexpr std::int64_t kUnkId = 3;
inline constexpr std::int64_t kReservedIds = 4;

}  // namespace pnet
