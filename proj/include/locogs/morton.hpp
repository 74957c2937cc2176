// Z-order (Morton) keys and the locality-preserving scene sort used before
// encoding, so the side streams stay associated with octree-coded positions.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "locogs/model.hpp"

namespace locogs {

constexpr int kDefaultMortonBits = 21;  // per axis; 63-bit keys

// Bit-interleaved key: bit 3k holds x bit k, 3k+1 holds y, 3k+2 holds z.
// Throws std::out_of_range if a coordinate does not fit `bits`.
uint64_t morton_key(uint32_t x, uint32_t y, uint32_t z, int bits = kDefaultMortonBits);

// Contract-and-map a raw position into [0,1]^3, then quantize to the Morton grid.
void morton_grid_coords(const Vec3& position, int bits, uint32_t out[3]);

struct MortonSortResult {
    SplatScene scene;                   // reordered
    std::vector<std::size_t> permutation;  // sorted[i] = original[permutation[i]]
};

// Stable sort by the Morton key of the quantized contracted position.
MortonSortResult morton_sort(const SplatScene& scene, int bits = kDefaultMortonBits);

}  // namespace locogs
