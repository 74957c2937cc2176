// The compressed-scene container: Morton-sorted association, lossless octree
// position coding over reinterpreted halfs, distribution-clipped quantization
// of base scales and colors, 2-bit bandwidth packing, quantized+entropy-coded
// grid parameters and entropy-only MLP parameters, with per-stream CRCs.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "locogs/field.hpp"
#include "locogs/model.hpp"
#include "locogs/morton.hpp"
#include "locogs/quantize.hpp"

namespace locogs {

class ContainerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class StreamId : uint8_t {
    Position = 1,
    BaseScale = 2,
    BaseColor = 3,
    Bandwidth = 4,
    GridParams = 5,
    HeadParams = 6,
};
constexpr int kStreamCount = 6;
const char* stream_name(StreamId id);

struct EncodeOptions {
    int gamma_bits = 6;
    int color_bits = 8;
    int theta_bits = 6;
    int morton_bits = kDefaultMortonBits;
};

struct CompressedScene {
    uint64_t gaussian_count = 0;
    int morton_bits = 21;
    int position_bits = 16;
    bool has_field = false;
    HashGridConfig field_config;
    uint64_t field_seed = 0;
    QuantSpec gamma_spec;
    QuantSpec color_spec[3];
    std::vector<QuantSpec> theta_specs;  // one per grid level
    std::vector<uint8_t> streams[kStreamCount];  // indexed by StreamId - 1

    std::vector<uint8_t> serialize() const;
    static CompressedScene parse(std::span<const uint8_t> bytes);
    void save(const std::string& path) const;
    static CompressedScene load(const std::string& path);

    std::size_t payload_bytes() const;
    std::size_t header_bytes() const;  // serialized size minus payloads
};

// Encodes the trained representation directly: per-gaussian explicit tuples
// (p, gamma, k0, b) plus the neural field. Positions are rounded to half
// precision if not already.
CompressedScene encode_scene(std::span<const ExplicitAttrs> explicit_attrs,
                             const HashGridField* field, const EncodeOptions& opts = {});

// Convenience overload deriving the explicit tuples by max-normalized
// split_attrs. Faithful when the scene's normalized scales follow that
// convention (true for distilled fields, approximate otherwise).
CompressedScene encode_scene(const SplatScene& scene, const HashGridField* field,
                             const EncodeOptions& opts = {});

struct DecodedScene {
    SplatScene scene;  // full gaussians in container (Morton) order
    std::vector<ExplicitAttrs> explicit_attrs;  // the stored tuples, same order
    std::optional<HashGridField> field;
};

// Verifies every stream checksum (errors name the stream), then reconstructs
// positions exactly, re-associates side streams by the encode-time sort key,
// dequantizes explicit attributes and materializes implicit ones from the field.
DecodedScene decode_scene(const CompressedScene& compressed);

// Position-only decode path (exact); used for byte-level verification.
std::vector<Vec3> decode_positions_only(const CompressedScene& compressed);

struct ContainerStats {
    uint64_t position = 0, color = 0, scale = 0, mask = 0, hash_mlp = 0, total = 0;
    uint64_t header = 0;
    uint64_t gaussian_count = 0;
    std::string to_json() const;  // the six storage categories plus metadata
};

ContainerStats container_stats(const CompressedScene& compressed);

uint32_t crc32(std::span<const uint8_t> data);

}  // namespace locogs
