#include "locogs/morton.hpp"

#include <algorithm>
#include <numeric>

#include "locogs/contraction.hpp"

namespace locogs {

namespace {

uint64_t spread_bits(uint32_t v, int bits) {
    uint64_t r = 0;
    for (int i = 0; i < bits; ++i) r |= (static_cast<uint64_t>((v >> i) & 1u)) << (3 * i);
    return r;
}

}  // namespace

uint64_t morton_key(uint32_t x, uint32_t y, uint32_t z, int bits) {
    uint32_t limit = (bits >= 32) ? 0xFFFFFFFFu : ((1u << bits) - 1u);
    if (x > limit || y > limit || z > limit)
        throw std::out_of_range("morton_key: coordinate exceeds bit width");
    return spread_bits(x, bits) | (spread_bits(y, bits) << 1) | (spread_bits(z, bits) << 2);
}

void morton_grid_coords(const Vec3& position, int bits, uint32_t out[3]) {
    Vec3 u = contract_to_unit(position);
    double cells = static_cast<double>(1u << bits);
    for (int a = 0; a < 3; ++a) {
        double q = std::floor(u[a] * cells);
        if (q < 0.0) q = 0.0;
        if (q > cells - 1.0) q = cells - 1.0;
        out[a] = static_cast<uint32_t>(q);
    }
}

MortonSortResult morton_sort(const SplatScene& scene, int bits) {
    std::vector<uint64_t> keys(scene.gaussians.size());
    for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
        uint32_t q[3];
        morton_grid_coords(scene.gaussians[i].position, bits, q);
        keys[i] = morton_key(q[0], q[1], q[2], bits);
    }
    std::vector<std::size_t> perm(scene.gaussians.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::stable_sort(perm.begin(), perm.end(),
                     [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

    MortonSortResult out;
    out.scene = scene;
    out.scene.gaussians.clear();
    out.scene.gaussians.reserve(scene.gaussians.size());
    for (std::size_t i : perm) out.scene.gaussians.push_back(scene.gaussians[i]);
    for (auto& e : out.scene.extra_fields) {
        std::vector<float> reordered(e.values.size());
        for (std::size_t i = 0; i < perm.size(); ++i) reordered[i] = e.values[perm[i]];
        e.values = std::move(reordered);
    }
    out.permutation = std::move(perm);
    return out;
}

}  // namespace locogs
