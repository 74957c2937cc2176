#include <doctest.h>

#include <cstring>
#include <map>
#include <set>

#include "locogs/container.hpp"
#include "locogs/entropy.hpp"
#include "locogs/half.hpp"
#include "locogs/render.hpp"
#include "support/synthetic.hpp"

using namespace locogs;

namespace {

HashGridConfig container_field_config() {
    HashGridConfig cfg;
    cfg.levels = 4;
    cfg.min_res = 4;
    cfg.max_res = 32;
    cfg.table_size_log2 = 10;
    cfg.feature_dim = 2;
    return cfg;
}

// Field with parameters large enough that quantization effects are visible
// but controlled.
HashGridField make_test_field(uint64_t seed) {
    HashGridField field(container_field_config(), seed);
    Rng rng(seed + 1);
    auto [grid, heads] = field.param_vectors();
    for (auto& g : grid) g = rng.uniform(-0.5, 0.5);
    field.set_param_vectors(grid, heads);
    return field;
}

uint64_t position_key(const Vec3& p) {
    uint64_t key = 0;
    for (int a = 0; a < 3; ++a)
        key = (key << 16) | double_to_half_bits(p[a]);
    return key;
}

}  // namespace

TEST_CASE("positions survive encode/decode bit-for-bit") {
    SplatScene scene = test::smooth_scene(3000, 21);
    SplatScene half = quantize_positions_to_half(scene);
    HashGridField field = make_test_field(3);
    CompressedScene c = encode_scene(half, &field, {});

    std::vector<Vec3> decoded = decode_positions_only(c);
    REQUIRE(decoded.size() == half.size());
    std::multiset<uint64_t> expected, got;
    for (const auto& g : half.gaussians) expected.insert(position_key(g.position));
    for (const auto& p : decoded) got.insert(position_key(p));
    CHECK(expected == got);
}

TEST_CASE("decode restores the position/attribute association by key lookup") {
    SplatScene scene = test::smooth_scene(800, 22);
    SplatScene half = quantize_positions_to_half(scene);
    HashGridField field = make_test_field(5);
    CompressedScene c = encode_scene(half, &field, {});
    DecodedScene dec = decode_scene(c);
    REQUIRE(dec.scene.size() == half.size());

    // Expected explicit tuples under the container's own quantizers.
    std::map<uint64_t, std::vector<std::pair<double, int>>> expect;  // pos key -> (gamma_q, b)
    for (const auto& g : half.gaussians) {
        auto [e, imp] = split_attrs(g);
        auto gq = quantize_with_spec(std::vector<double>{e.base_scale}, c.gamma_spec);
        expect[position_key(g.position)].push_back(
            {dequantize_one(gq[0], c.gamma_spec), e.bandwidth});
    }
    for (const auto& e : dec.explicit_attrs) {
        auto it = expect.find(position_key(e.position));
        REQUIRE(it != expect.end());
        bool found = false;
        for (auto& [gamma_q, b] : it->second)
            if (gamma_q == e.base_scale && b == e.bandwidth) found = true;
        CHECK(found);
    }
}

TEST_CASE("base attributes reconstruct within half a quantization step") {
    SplatScene scene = test::smooth_scene(600, 23);
    SplatScene half = quantize_positions_to_half(scene);
    HashGridField field = make_test_field(7);
    CompressedScene c = encode_scene(half, &field, {});
    CHECK(c.gamma_spec.clip_multiplier() == 4.0);     // 6-bit default
    CHECK(c.color_spec[0].clip_multiplier() == 4.4);  // 8-bit default
    DecodedScene dec = decode_scene(c);

    std::map<uint64_t, const Gaussian*> by_pos;
    for (const auto& g : half.gaussians) by_pos[position_key(g.position)] = &g;
    double gamma_step = c.gamma_spec.step();
    for (const auto& e_dec : dec.explicit_attrs) {
        const Gaussian* orig = by_pos.at(position_key(e_dec.position));
        auto [e_orig, i_orig] = split_attrs(*orig);
        if (e_orig.base_scale >= c.gamma_spec.lo() && e_orig.base_scale <= c.gamma_spec.hi())
            CHECK(std::fabs(e_dec.base_scale - e_orig.base_scale) <= gamma_step * 0.5 + 1e-12);
        for (int ch = 0; ch < 3; ++ch) {
            double v = e_orig.base_color[ch];
            if (v >= c.color_spec[ch].lo() && v <= c.color_spec[ch].hi())
                CHECK(std::fabs(e_dec.base_color[ch] - v) <= c.color_spec[ch].step() * 0.5 + 1e-12);
        }
    }
}

TEST_CASE("decoded field evaluates close to the original") {
    SplatScene scene = test::smooth_scene(200, 24);
    SplatScene half = quantize_positions_to_half(scene);
    HashGridField field = make_test_field(9);
    CompressedScene c = encode_scene(half, &field, {});
    DecodedScene dec = decode_scene(c);
    REQUIRE(dec.field.has_value());
    // Heads are entropy-only (float32 exact); grid is 6-bit quantized.
    auto [g0, h0] = field.param_vectors();
    auto [g1, h1] = dec.field->param_vectors();
    for (std::size_t i = 0; i < h0.size(); ++i)
        CHECK(h1[i] == static_cast<double>(static_cast<float>(h0[i])));
    double max_err = 0;
    for (std::size_t i = 0; i < g0.size(); ++i) max_err = std::fmax(max_err, std::fabs(g1[i] - g0[i]));
    // Worst case half a step of the widest level spec.
    double bound = 0;
    for (const auto& ts : c.theta_specs) bound = std::fmax(bound, ts.step() * 0.5);
    CHECK(max_err <= bound + 1e-12);
}

TEST_CASE("container serialization round-trips byte-exactly") {
    SplatScene scene = test::smooth_scene(100, 25);
    HashGridField field = make_test_field(11);
    CompressedScene c = encode_scene(scene, &field, {});
    auto bytes = c.serialize();
    CompressedScene parsed = CompressedScene::parse(bytes);
    CHECK(parsed.serialize() == bytes);
    CHECK(parsed.gaussian_count == c.gaussian_count);
    CHECK(parsed.has_field == c.has_field);
}

TEST_CASE("empty scene yields a minimal valid container") {
    SplatScene empty;
    CompressedScene c = encode_scene(empty, nullptr, {});
    auto bytes = c.serialize();
    CompressedScene parsed = CompressedScene::parse(bytes);
    DecodedScene dec = decode_scene(parsed);
    CHECK(dec.scene.size() == 0);
    CHECK(!dec.field.has_value());
    CHECK(bytes.size() < 256);
}

TEST_CASE("corrupting one stream fails with an error naming that stream") {
    SplatScene scene = test::smooth_scene(100, 26);
    HashGridField field = make_test_field(13);
    CompressedScene c = encode_scene(scene, &field, {});
    auto bytes = c.serialize();

    // Locate the color stream payload and flip one byte.
    std::size_t offset = bytes.size();
    for (int s = kStreamCount - 1; s >= 2; --s) offset -= c.streams[s].size();
    bytes[offset + c.streams[2].size() / 2] ^= 0xFF;
    CHECK_THROWS_WITH_AS(CompressedScene::parse(bytes), doctest::Contains("base_color"),
                         ContainerError);
}

TEST_CASE("version and magic mismatches are rejected") {
    SplatScene scene;
    CompressedScene c = encode_scene(scene, nullptr, {});
    auto bytes = c.serialize();
    auto bad_magic = bytes;
    bad_magic[0] ^= 0xFF;
    CHECK_THROWS_WITH_AS(CompressedScene::parse(bad_magic), doctest::Contains("magic"),
                         ContainerError);
    auto bad_version = bytes;
    bad_version[4] = 0xEE;
    CHECK_THROWS_WITH_AS(CompressedScene::parse(bad_version), doctest::Contains("version"),
                         ContainerError);
}

TEST_CASE("morton sorting shrinks the entropy-coded color stream") {
    // Spatially coherent colors: sorted order clusters symbols, random order
    // mixes them; the adaptive coder must see the difference.
    SplatScene scene = test::smooth_scene(20000, 27);
    std::vector<double> channel;
    channel.reserve(scene.size());
    auto sorted = morton_sort(scene);
    for (const auto& g : sorted.scene.gaussians) channel.push_back(g.sh[0].x);
    auto q = quantize(channel, 8);
    auto sorted_stream = entropy_encode(q.codes, 256);

    Rng rng(99);
    std::vector<uint16_t> shuffled = q.codes;
    for (std::size_t i = shuffled.size(); i > 1; --i)
        std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
    auto shuffled_stream = entropy_encode(shuffled, 256);
    CHECK(sorted_stream.size() < shuffled_stream.size());
}

TEST_CASE("stats reports the six storage categories summing to the payload") {
    SplatScene scene = test::smooth_scene(500, 28);
    HashGridField field = make_test_field(17);
    CompressedScene c = encode_scene(scene, &field, {});
    ContainerStats stats = container_stats(c);
    CHECK(stats.total == stats.position + stats.color + stats.scale + stats.mask + stats.hash_mlp);
    CHECK(stats.total == c.payload_bytes());
    CHECK(stats.header == c.serialize().size() - c.payload_bytes());
    std::string json = stats.to_json();
    for (const char* key : {"Position", "Color", "Scale", "Mask", "Hash+MLP", "Total"})
        CHECK(json.find(key) != std::string::npos);
}

TEST_CASE("decode rejects truncated containers") {
    SplatScene scene = test::smooth_scene(50, 29);
    CompressedScene c = encode_scene(scene, nullptr, {});
    auto bytes = c.serialize();
    bytes.resize(bytes.size() / 2);
    CHECK_THROWS_AS(CompressedScene::parse(bytes), ContainerError);
}
