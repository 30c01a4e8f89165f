#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cdrcot {

/// Lower-case hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// 64-bit mixing step used wherever a deterministic pseudo-random draw is
/// derived from content (mock decisions, retry jitter, per-class split seeds).
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// FNV-1a over bytes, then splitmix64. Stable across platforms.
std::uint64_t stable_hash(std::string_view data, std::uint64_t salt = 0);

/// Maps a 64-bit hash onto [0, 1).
inline double unit_interval(std::uint64_t h) {
    return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

}  // namespace cdrcot
