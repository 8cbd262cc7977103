#pragma once

// Registered infrared/visible look-alikes for smoke tests and desk-scale
// experiments when no real corpus is at hand. A shared scene layout gives the
// two modalities common low-frequency content; the infrared image adds warm
// blobs, the visible image adds texture and shading.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "didfuse/image.hpp"
#include "didfuse/io.hpp"

namespace didfuse {

struct SyntheticPair {
  std::string id;
  Image ir;
  Image vis;
};

SyntheticPair synthetic_pair(std::size_t height, std::size_t width, std::uint64_t seed);
std::vector<SyntheticPair> synthetic_pairs(std::size_t count, std::size_t height, std::size_t width,
                                           std::uint64_t seed);

// Writes <dir>/ir/<id>.png and <dir>/vis/<id>.png and returns the manifest.
PairManifest write_synthetic_corpus(const std::filesystem::path& dir, std::size_t count, std::size_t height,
                                    std::size_t width, std::uint64_t seed);

}  // namespace didfuse
