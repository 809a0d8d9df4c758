#pragma once

#include <cstdint>
#include <string_view>

namespace tte {

// SplitMix64 finalizer. Full avalanche: every input bit affects every output bit.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view text,
                                std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Derives an independent stream seed from an experiment seed and a role tag
// such as "split", "val", "init" or "shuffle".
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view role) noexcept {
    return mix64(seed ^ mix64(fnv1a64(role)));
}

}  // namespace tte
