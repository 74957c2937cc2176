#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "locogs/entropy.hpp"
#include "locogs/half.hpp"
#include "locogs/morton.hpp"
#include "locogs/octree.hpp"
#include "locogs/quantize.hpp"
#include "locogs/rng.hpp"
#include "support/synthetic.hpp"

using namespace locogs;

namespace {

// Bit-by-bit reference interleaver, independent of the production shift logic.
uint64_t reference_morton(uint32_t x, uint32_t y, uint32_t z, int bits) {
    uint64_t key = 0;
    int out = 0;
    for (int i = 0; i < bits; ++i) {
        key |= static_cast<uint64_t>((x >> i) & 1u) << out++;
        key |= static_cast<uint64_t>((y >> i) & 1u) << out++;
        key |= static_cast<uint64_t>((z >> i) & 1u) << out++;
    }
    return key;
}

}  // namespace

TEST_CASE("morton key single-bit cases") {
    CHECK(morton_key(0, 0, 0) == 0);
    CHECK(morton_key(1, 0, 0) == 1);
    CHECK(morton_key(0, 1, 0) == 2);
    CHECK(morton_key(0, 0, 1) == 4);
}

TEST_CASE("morton keys over the 4x4x4 cube are a permutation of 0..63") {
    std::vector<uint64_t> keys;
    for (uint32_t x = 0; x < 4; ++x)
        for (uint32_t y = 0; y < 4; ++y)
            for (uint32_t z = 0; z < 4; ++z) {
                uint64_t k = morton_key(x, y, z, 2);
                CHECK(k == reference_morton(x, y, z, 2));
                keys.push_back(k);
            }
    std::sort(keys.begin(), keys.end());
    for (std::size_t i = 0; i < keys.size(); ++i) CHECK(keys[i] == i);
}

TEST_CASE("morton key rejects out-of-range coordinates") {
    CHECK_THROWS_AS(morton_key(1u << 21, 0, 0, 21), std::out_of_range);
}

TEST_CASE("morton sort of a sorted scene is the identity permutation") {
    SplatScene scene;
    for (int i = 0; i < 16; ++i) {
        Gaussian g = test::default_gaussian();
        g.position = {static_cast<double>(i) * 0.05, 0.0, 0.0};
        scene.gaussians.push_back(g);
    }
    scene.recompute_bounds();
    auto sorted = morton_sort(scene);
    for (std::size_t i = 0; i < sorted.permutation.size(); ++i) CHECK(sorted.permutation[i] == i);

    std::reverse(scene.gaussians.begin(), scene.gaussians.end());
    auto rev = morton_sort(scene);
    for (std::size_t i = 0; i < rev.permutation.size(); ++i)
        CHECK(rev.permutation[i] == rev.permutation.size() - 1 - i);
}

TEST_CASE("morton sort reduces mean adjacent pair distance") {
    SplatScene scene = test::random_scene(2000, 42);
    auto mean_adjacent = [](const SplatScene& s) {
        double total = 0;
        for (std::size_t i = 0; i + 1 < s.gaussians.size(); ++i)
            total += norm(s.gaussians[i + 1].position - s.gaussians[i].position);
        return total / static_cast<double>(s.gaussians.size() - 1);
    };
    auto sorted = morton_sort(scene);
    CHECK(mean_adjacent(sorted.scene) < mean_adjacent(scene));
}

TEST_CASE("half reinterpretation: zero maps to zero") {
    CHECK(half_reinterpret_to_int(double_to_half_bits(0.0)) == 0);
}

TEST_CASE("half reinterpretation round-trips every finite half exactly") {
    int finite = 0;
    for (uint32_t bits = 0; bits <= 0xFFFF; ++bits) {
        uint16_t h = static_cast<uint16_t>(bits);
        if (!half_is_finite(h)) continue;
        ++finite;
        CHECK(half_reinterpret_from_int(half_reinterpret_to_int(h)) == h);
    }
    CHECK(finite == 63488);
}

TEST_CASE("half reinterpretation is strictly monotone in the real values") {
    // Collect all finite halfs sorted by real value; equal reals (+-0) keep
    // their integer order adjacent.
    std::vector<uint16_t> halfs;
    for (uint32_t bits = 0; bits <= 0xFFFF; ++bits)
        if (half_is_finite(static_cast<uint16_t>(bits))) halfs.push_back(static_cast<uint16_t>(bits));
    std::sort(halfs.begin(), halfs.end(), [](uint16_t a, uint16_t b) {
        return half_bits_to_float(a) < half_bits_to_float(b);
    });
    for (std::size_t i = 0; i + 1 < halfs.size(); ++i) {
        float fa = half_bits_to_float(halfs[i]);
        float fb = half_bits_to_float(halfs[i + 1]);
        if (fa < fb) CHECK(half_reinterpret_to_int(halfs[i]) < half_reinterpret_to_int(halfs[i + 1]));
    }
}

TEST_CASE("half conversion round-trips through float for every pattern") {
    for (uint32_t bits = 0; bits <= 0xFFFF; ++bits) {
        uint16_t h = static_cast<uint16_t>(bits);
        if (!half_is_finite(h)) continue;
        CHECK(float_to_half_bits(half_bits_to_float(h)) == h);
    }
}

TEST_CASE("octree single point round-trips") {
    std::vector<UVec3> pts{{5, 9, 2}};
    auto stream = octree_encode(pts, 4);
    CHECK(stream.size() == 4 + 1);  // one octet per level plus one count byte
    auto back = octree_decode(stream, 4, 1);
    REQUIRE(back.size() == 1);
    CHECK(back[0] == UVec3{5, 9, 2});
}

TEST_CASE("octree of all eight cube corners has a full root octet") {
    std::vector<UVec3> pts;
    for (uint32_t x = 0; x < 2; ++x)
        for (uint32_t y = 0; y < 2; ++y)
            for (uint32_t z = 0; z < 2; ++z) pts.push_back({x * 15, y * 15, z * 15});
    auto stream = octree_encode(pts, 4);
    CHECK(stream[0] == 0xFF);
    auto back = octree_decode(stream, 4, pts.size());
    CHECK(back.size() == 8);
}

TEST_CASE("octree round-trips random multisets in morton order and beats raw size when clustered") {
    Rng rng(7);
    std::vector<UVec3> pts;
    // Clustered points with duplicates.
    for (int c = 0; c < 20; ++c) {
        uint32_t cx = static_cast<uint32_t>(rng.below(1 << 16));
        uint32_t cy = static_cast<uint32_t>(rng.below(1 << 16));
        uint32_t cz = static_cast<uint32_t>(rng.below(1 << 16));
        for (int i = 0; i < 500; ++i) {
            auto jitter = [&](uint32_t v) {
                int32_t d = static_cast<int32_t>(rng.below(64)) - 32;
                int64_t r = static_cast<int64_t>(v) + d;
                return static_cast<uint32_t>(std::clamp<int64_t>(r, 0, (1 << 16) - 1));
            };
            pts.push_back({jitter(cx), jitter(cy), jitter(cz)});
        }
    }
    pts.push_back(pts.front());  // guaranteed duplicate

    auto stream = octree_encode(pts, 16);
    auto back = octree_decode(stream, 16, pts.size());
    REQUIRE(back.size() == pts.size());

    std::vector<UVec3> expected = pts;
    std::sort(expected.begin(), expected.end(), [](const UVec3& a, const UVec3& b) {
        return morton_key(a[0], a[1], a[2], 16) < morton_key(b[0], b[1], b[2], 16);
    });
    CHECK(back == expected);

    std::size_t raw_bytes = pts.size() * 3 * 2;  // 3 axes x 16 bits
    CHECK(stream.size() < raw_bytes);
}

TEST_CASE("octree rejects out-of-range points and corrupt streams") {
    CHECK_THROWS_AS(octree_encode({{16, 0, 0}}, 4), OctreeError);
    auto stream = octree_encode({{1, 2, 3}}, 4);
    auto truncated = stream;
    truncated.pop_back();
    CHECK_THROWS_AS(octree_decode(truncated, 4, 1), OctreeError);
    CHECK_THROWS_AS(octree_decode(stream, 4, 2), OctreeError);
}

TEST_CASE("quantization clip multipliers follow the k-bit formula") {
    std::vector<double> values{0.0, 1.0, 2.0, 3.0};
    CHECK(quantize(values, 6).spec.clip_multiplier() == 4.0);
    CHECK(quantize(values, 8).spec.clip_multiplier() == doctest::Approx(4.4));
    CHECK(quantize(values, 1).spec.clip_multiplier() == 3.0);
    CHECK(quantize(values, 16).spec.clip_multiplier() == 6.0);
}

TEST_CASE("quantization reconstruction error is bounded by half a step") {
    Rng rng(11);
    std::vector<double> values(100000);
    for (auto& v : values) v = rng.normal() * 2.5 + 1.0;
    for (int bits : {4, 6, 8}) {
        auto [codes, spec] = quantize(values, bits);
        double step = spec.step();
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (values[i] < spec.lo() || values[i] > spec.hi()) continue;  // clipped
            CHECK(std::fabs(values[i] - dequantize_one(codes[i], spec)) <= step * 0.5 + 1e-12);
        }
    }
}

TEST_CASE("constant input quantizes degenerately and reconstructs exactly") {
    std::vector<double> values(100, 3.25);
    auto [codes, spec] = quantize(values, 6);
    CHECK(spec.degenerate);
    for (auto c : codes) CHECK(c == 0);
    for (double v : dequantize(codes, spec)) CHECK(v == 3.25);
}

TEST_CASE("entropy coding round-trips and compresses a constant stream below 1%") {
    std::vector<uint16_t> symbols(10000, 42);
    auto stream = entropy_encode(symbols, 256);
    CHECK(entropy_decode(stream, 256) == symbols);
    CHECK(stream.size() < 100);  // < 1% of the 10000-byte raw stream
}

TEST_CASE("entropy coding of an empty stream is header-only") {
    std::vector<uint16_t> symbols;
    auto stream = entropy_encode(symbols, 256);
    CHECK(stream.size() == 1);
    CHECK(entropy_decode(stream, 256).empty());
}

TEST_CASE("entropy coding expands uniform random bytes by at most 0.5%") {
    Rng rng(5);
    std::vector<uint16_t> symbols(100000);
    for (auto& s : symbols) s = static_cast<uint16_t>(rng.below(256));
    auto stream = entropy_encode(symbols, 256);
    CHECK(entropy_decode(stream, 256) == symbols);
    CHECK(static_cast<double>(stream.size()) <= static_cast<double>(symbols.size()) * 1.005);
}

TEST_CASE("entropy coding round-trips skewed and small-alphabet streams") {
    Rng rng(6);
    std::vector<uint16_t> symbols(50000);
    for (auto& s : symbols) {
        // Geometric-ish skew over a 64-symbol alphabet.
        uint16_t v = 0;
        while (v < 63 && rng.uniform() < 0.35) ++v;
        s = v;
    }
    auto stream = entropy_encode(symbols, 64);
    CHECK(entropy_decode(stream, 64) == symbols);
    // Skewed data must beat the fixed-width bound n*ceil(log2(64))/8 + constant.
    CHECK(stream.size() <= symbols.size() * 6 / 8 + 16);
}

TEST_CASE("entropy decoder detects truncation") {
    std::vector<uint16_t> symbols(1000);
    Rng rng(8);
    for (auto& s : symbols) s = static_cast<uint16_t>(rng.below(256));
    auto stream = entropy_encode(symbols, 256);
    std::vector<uint8_t> cut(stream.begin(), stream.begin() + stream.size() / 2);
    CHECK_THROWS_AS(entropy_decode(cut, 256), EntropyError);
}

TEST_CASE("entropy coder survives carry-stress round trips across many seeds") {
    // Long skewed streams exercise the range coder's carry propagation and
    // 0xFF cache chains; every stream must decode exactly.
    for (uint64_t seed = 0; seed < 30; ++seed) {
        Rng rng(seed * 7919 + 1);
        int alphabet = 2 + static_cast<int>(rng.below(300));
        std::size_t n = 2000 + rng.below(20000);
        std::vector<uint16_t> symbols(n);
        // Mix of long runs and jumps.
        uint16_t current = static_cast<uint16_t>(rng.below(static_cast<uint64_t>(alphabet)));
        for (auto& s : symbols) {
            if (rng.uniform() < 0.02)
                current = static_cast<uint16_t>(rng.below(static_cast<uint64_t>(alphabet)));
            s = current;
        }
        auto stream = entropy_encode(symbols, alphabet);
        REQUIRE(entropy_decode(stream, alphabet) == symbols);
    }
}

TEST_CASE("entropy coder handles single-symbol and two-symbol alphabets") {
    std::vector<uint16_t> ones(5000, 0);
    auto s1 = entropy_encode(ones, 1);
    CHECK(entropy_decode(s1, 1) == ones);
    Rng rng(77);
    std::vector<uint16_t> bits(10000);
    for (auto& b : bits) b = static_cast<uint16_t>(rng.below(2));
    auto s2 = entropy_encode(bits, 2);
    CHECK(entropy_decode(s2, 2) == bits);
}
