#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace road {

/// 64-bit FNV-1a. Content addressing only; not a cryptographic digest.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;

/// Lower-case, zero-padded 16-digit hex of fnv1a64(data).
std::string content_hash(std::string_view data);

}  // namespace road
