// Lossless octree geometry coding of integer point sets: breadth-first
// occupancy octets plus leaf multiplicity varints. Decode emits the point
// multiset in Morton order.
#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace locogs {

using UVec3 = std::array<uint32_t, 3>;

class OctreeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// `bits` is the cube depth: coordinates must lie in [0, 2^bits).
std::vector<uint8_t> octree_encode(std::vector<UVec3> points, int bits);

// `count` is the expected number of decoded points (duplicates included).
std::vector<UVec3> octree_decode(const std::vector<uint8_t>& stream, int bits, std::size_t count);

}  // namespace locogs
