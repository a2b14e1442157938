// Reproducible random streams: every consumer derives its engine from one
// root seed and a task path string, so results do not depend on scheduling.
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cfk {

// Split rule: substream seed = root XOR FNV-1a(task path), then SplitMix64
// to decorrelate nearby values.
inline std::uint64_t substream_seed(std::uint64_t root, std::string_view task_path) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : task_path) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ull;
    }
    std::uint64_t z = root ^ h;
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::mt19937_64 substream(std::uint64_t root, std::string_view task_path) {
    return std::mt19937_64(substream_seed(root, task_path));
}

}  // namespace cfk
