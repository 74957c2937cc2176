#include "locogs/octree.hpp"

#include <algorithm>

#include "locogs/morton.hpp"

namespace locogs {

namespace {

void put_varint(std::vector<uint8_t>& out, uint64_t v) {
    while (v >= 0x80) {
        out.push_back(static_cast<uint8_t>(v) | 0x80);
        v >>= 7;
    }
    out.push_back(static_cast<uint8_t>(v));
}

uint64_t get_varint(const std::vector<uint8_t>& data, std::size_t& pos) {
    uint64_t v = 0;
    int shift = 0;
    for (;;) {
        if (pos >= data.size()) throw OctreeError("truncated octree stream");
        uint8_t b = data[pos++];
        v |= static_cast<uint64_t>(b & 0x7F) << shift;
        if (!(b & 0x80)) return v;
        shift += 7;
        if (shift > 63) throw OctreeError("octree varint overflow");
    }
}

// Child slot from the coordinate bits at depth `bit`, matching the morton_key
// convention (x lowest): (z<<2)|(y<<1)|x.
inline int child_slot(const UVec3& p, int bit) {
    return static_cast<int>((((p[2] >> bit) & 1u) << 2) | (((p[1] >> bit) & 1u) << 1) |
                            ((p[0] >> bit) & 1u));
}

struct NodeRange {
    std::size_t begin, end;  // over the morton-sorted point array
};

}  // namespace

std::vector<uint8_t> octree_encode(std::vector<UVec3> points, int bits) {
    if (bits < 1 || bits > 21) throw OctreeError("octree bit depth outside [1,21]");
    uint32_t limit = 1u << bits;
    for (const auto& p : points)
        if (p[0] >= limit || p[1] >= limit || p[2] >= limit)
            throw OctreeError("point outside octree cube");

    std::vector<uint8_t> out;
    if (points.empty()) return out;

    std::sort(points.begin(), points.end(), [bits](const UVec3& a, const UVec3& b) {
        return morton_key(a[0], a[1], a[2], bits) < morton_key(b[0], b[1], b[2], bits);
    });

    std::vector<NodeRange> level{{0, points.size()}};
    for (int depth = 0; depth < bits; ++depth) {
        int bit = bits - 1 - depth;
        std::vector<NodeRange> next;
        next.reserve(level.size() * 2);
        for (const NodeRange& node : level) {
            uint8_t occupancy = 0;
            std::size_t i = node.begin;
            std::array<NodeRange, 8> children{};
            while (i < node.end) {
                int slot = child_slot(points[i], bit);
                std::size_t j = i + 1;
                while (j < node.end && child_slot(points[j], bit) == slot) ++j;
                occupancy |= static_cast<uint8_t>(1u << slot);
                children[static_cast<std::size_t>(slot)] = {i, j};
                i = j;
            }
            out.push_back(occupancy);
            for (int slot = 0; slot < 8; ++slot)
                if (occupancy & (1u << slot)) next.push_back(children[static_cast<std::size_t>(slot)]);
        }
        level = std::move(next);
    }
    // Leaves in morton order; store multiplicity - 1.
    for (const NodeRange& leaf : level) put_varint(out, leaf.end - leaf.begin - 1);
    return out;
}

std::vector<UVec3> octree_decode(const std::vector<uint8_t>& stream, int bits, std::size_t count) {
    if (bits < 1 || bits > 21) throw OctreeError("octree bit depth outside [1,21]");
    std::vector<UVec3> out;
    if (count == 0) {
        if (!stream.empty()) throw OctreeError("nonempty stream for empty point set");
        return out;
    }
    out.reserve(count);

    std::size_t pos = 0;
    std::vector<UVec3> level{{0, 0, 0}};  // node coordinate prefixes
    for (int depth = 0; depth < bits; ++depth) {
        std::vector<UVec3> next;
        next.reserve(level.size() * 2);
        for (const UVec3& node : level) {
            if (pos >= stream.size()) throw OctreeError("truncated octree stream");
            uint8_t occupancy = stream[pos++];
            if (occupancy == 0) throw OctreeError("corrupt octree: empty interior node");
            for (int slot = 0; slot < 8; ++slot) {
                if (!(occupancy & (1u << slot))) continue;
                next.push_back({(node[0] << 1) | (static_cast<uint32_t>(slot) & 1u),
                                (node[1] << 1) | ((static_cast<uint32_t>(slot) >> 1) & 1u),
                                (node[2] << 1) | ((static_cast<uint32_t>(slot) >> 2) & 1u)});
            }
        }
        level = std::move(next);
    }
    for (const UVec3& leaf : level) {
        uint64_t extra = get_varint(stream, pos);
        for (uint64_t i = 0; i <= extra; ++i) {
            if (out.size() >= count) throw OctreeError("corrupt octree: too many points");
            out.push_back(leaf);
        }
    }
    if (out.size() != count) throw OctreeError("corrupt octree: point count mismatch");
    if (pos != stream.size()) throw OctreeError("corrupt octree: trailing bytes");
    return out;
}

}  // namespace locogs
