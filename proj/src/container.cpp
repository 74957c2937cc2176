#include "locogs/container.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "locogs/entropy.hpp"
#include "locogs/half.hpp"
#include "locogs/octree.hpp"

namespace locogs {

namespace {

constexpr uint32_t kMagic = 0x5347434Cu;  // "LCGS"
constexpr uint16_t kVersion = 1;
constexpr int kPositionBits = 16;
constexpr int32_t kCoordOffset = 32768;  // shifts reinterpreted halfs into [0, 2^16)

struct Writer {
    std::vector<uint8_t> bytes;
    template <typename T>
    void pod(const T& v) {
        const auto* p = reinterpret_cast<const uint8_t*>(&v);
        bytes.insert(bytes.end(), p, p + sizeof(T));
    }
    void raw(std::span<const uint8_t> data) { bytes.insert(bytes.end(), data.begin(), data.end()); }
};

struct Reader {
    std::span<const uint8_t> bytes;
    std::size_t pos = 0;
    template <typename T>
    T pod() {
        if (pos + sizeof(T) > bytes.size()) throw ContainerError("truncated container header");
        T v;
        std::memcpy(&v, bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    std::vector<uint8_t> raw(std::size_t n) {
        if (pos + n > bytes.size()) throw ContainerError("truncated container payload");
        std::vector<uint8_t> out(bytes.begin() + static_cast<long>(pos),
                                 bytes.begin() + static_cast<long>(pos + n));
        pos += n;
        return out;
    }
};

void write_spec(Writer& w, const QuantSpec& s) {
    w.pod(static_cast<uint8_t>(s.bits));
    w.pod(static_cast<uint8_t>(s.degenerate ? 1 : 0));
    w.pod(s.mean);
    w.pod(s.stddev);
}

QuantSpec read_spec(Reader& r) {
    QuantSpec s;
    s.bits = r.pod<uint8_t>();
    s.degenerate = r.pod<uint8_t>() != 0;
    s.mean = r.pod<double>();
    s.stddev = r.pod<double>();
    return s;
}

// Encode-time total order: Morton key of the quantized contracted position,
// ties broken by the reinterpreted integer triple. Decode recomputes the same
// keys from decoded positions to restore the association.
struct SortKey {
    uint64_t morton;
    uint64_t triple;
    bool operator<(const SortKey& o) const {
        return morton != o.morton ? morton < o.morton : triple < o.triple;
    }
};

SortKey sort_key_for(const Vec3& position, int morton_bits) {
    uint32_t q[3];
    morton_grid_coords(position, morton_bits, q);
    uint64_t triple = 0;
    for (int a = 0; a < 3; ++a) {
        uint16_t h = double_to_half_bits(position[a]);
        uint32_t u = static_cast<uint32_t>(half_reinterpret_to_int(h) + kCoordOffset);
        triple = (triple << 16) | u;
    }
    return {morton_key(q[0], q[1], q[2], morton_bits), triple};
}

}  // namespace

const char* stream_name(StreamId id) {
    switch (id) {
        case StreamId::Position: return "position";
        case StreamId::BaseScale: return "base_scale";
        case StreamId::BaseColor: return "base_color";
        case StreamId::Bandwidth: return "bandwidth";
        case StreamId::GridParams: return "grid_params";
        case StreamId::HeadParams: return "head_params";
    }
    return "unknown";
}

uint32_t crc32(std::span<const uint8_t> data) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t c = 0xFFFFFFFFu;
    for (uint8_t b : data) c = table[(c ^ b) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

CompressedScene encode_scene(std::span<const ExplicitAttrs> explicit_attrs,
                             const HashGridField* field, const EncodeOptions& opts) {
    CompressedScene out;
    out.gaussian_count = explicit_attrs.size();
    out.morton_bits = opts.morton_bits;
    out.position_bits = kPositionBits;

    // Positions are stored at half precision; round (documented lossy step)
    // and sort by the encode key.
    std::vector<Vec3> positions(explicit_attrs.size());
    for (std::size_t i = 0; i < explicit_attrs.size(); ++i)
        for (int a = 0; a < 3; ++a)
            positions[i][a] = half_bits_to_double(double_to_half_bits(explicit_attrs[i].position[a]));

    std::vector<std::size_t> order(explicit_attrs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<SortKey> keys(explicit_attrs.size());
    for (std::size_t i = 0; i < explicit_attrs.size(); ++i)
        keys[i] = sort_key_for(positions[i], opts.morton_bits);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

    // Position stream: reinterpret -> octree -> entropy.
    std::vector<UVec3> coords;
    coords.reserve(explicit_attrs.size());
    for (std::size_t i : order) {
        const Vec3& p = positions[i];
        UVec3 c;
        for (int a = 0; a < 3; ++a) {
            uint16_t h = double_to_half_bits(p[a]);
            c[static_cast<std::size_t>(a)] =
                static_cast<uint32_t>(half_reinterpret_to_int(h) + kCoordOffset);
        }
        coords.push_back(c);
    }
    std::vector<uint8_t> octree = octree_encode(coords, kPositionBits);
    out.streams[0] = entropy_encode_bytes(octree);

    // Base scale and color in encode order.
    std::vector<double> gammas;
    std::vector<double> colors[3];
    std::vector<uint16_t> bandwidths;
    gammas.reserve(explicit_attrs.size());
    for (std::size_t i : order) {
        const ExplicitAttrs& e = explicit_attrs[i];
        gammas.push_back(e.base_scale);
        for (int ch = 0; ch < 3; ++ch) colors[ch].push_back(e.base_color[ch]);
        bandwidths.push_back(static_cast<uint16_t>(e.bandwidth));
    }
    if (!gammas.empty()) {
        auto gq = quantize(gammas, opts.gamma_bits);
        out.gamma_spec = gq.spec;
        out.streams[1] = entropy_encode(gq.codes, 1 << opts.gamma_bits);
        std::vector<uint16_t> color_codes;
        color_codes.reserve(3 * explicit_attrs.size());
        for (int ch = 0; ch < 3; ++ch) {
            auto cq = quantize(colors[ch], opts.color_bits);
            out.color_spec[ch] = cq.spec;
            color_codes.insert(color_codes.end(), cq.codes.begin(), cq.codes.end());
        }
        out.streams[2] = entropy_encode(color_codes, 1 << opts.color_bits);
        // Bandwidths: 2 bits per gaussian packed four to a byte, then entropy.
        std::vector<uint8_t> packed((bandwidths.size() + 3) / 4, 0);
        for (std::size_t i = 0; i < bandwidths.size(); ++i)
            packed[i / 4] |= static_cast<uint8_t>((bandwidths[i] & 3u) << (2 * (i % 4)));
        out.streams[3] = entropy_encode_bytes(packed);
    } else {
        out.gamma_spec.bits = opts.gamma_bits;
        out.gamma_spec.degenerate = true;
        for (auto& cs : out.color_spec) {
            cs.bits = opts.color_bits;
            cs.degenerate = true;
        }
        out.streams[1] = entropy_encode({}, 1 << opts.gamma_bits);
        out.streams[2] = entropy_encode({}, 1 << opts.color_bits);
        out.streams[3] = entropy_encode_bytes({});
    }

    // Field streams: quantized grid parameters per level, raw-entropy heads.
    if (field != nullptr) {
        out.has_field = true;
        out.field_config = field->config();
        out.field_seed = field->seed();
        std::span<const double> grid = field->grid_params();
        std::vector<uint16_t> grid_codes;
        grid_codes.reserve(grid.size());
        std::size_t offset = 0;
        for (int l = 0; l < out.field_config.levels; ++l) {
            std::size_t n = out.field_config.level_entries(l) *
                            static_cast<std::size_t>(out.field_config.feature_dim);
            auto q = quantize(grid.subspan(offset, n), opts.theta_bits);
            out.theta_specs.push_back(q.spec);
            grid_codes.insert(grid_codes.end(), q.codes.begin(), q.codes.end());
            offset += n;
        }
        out.streams[4] = entropy_encode(grid_codes, 1 << opts.theta_bits);

        std::span<const double> heads = field->head_params();
        std::vector<uint8_t> head_bytes(heads.size() * 4);
        for (std::size_t i = 0; i < heads.size(); ++i) {
            float f = static_cast<float>(heads[i]);
            std::memcpy(head_bytes.data() + i * 4, &f, 4);
        }
        out.streams[5] = entropy_encode_bytes(head_bytes);
    } else {
        out.streams[4] = entropy_encode({}, 1 << opts.theta_bits);
        out.streams[5] = entropy_encode_bytes({});
    }
    return out;
}

CompressedScene encode_scene(const SplatScene& scene, const HashGridField* field,
                             const EncodeOptions& opts) {
    std::vector<ExplicitAttrs> explicit_attrs;
    explicit_attrs.reserve(scene.size());
    for (const auto& g : scene.gaussians) explicit_attrs.push_back(split_attrs(g).first);
    return encode_scene(explicit_attrs, field, opts);
}

std::vector<uint8_t> CompressedScene::serialize() const {
    Writer w;
    w.pod(kMagic);
    w.pod(kVersion);
    w.pod(static_cast<uint16_t>(has_field ? 1 : 0));
    w.pod(gaussian_count);
    w.pod(static_cast<uint8_t>(morton_bits));
    w.pod(static_cast<uint8_t>(position_bits));
    w.pod(static_cast<uint16_t>(0));
    w.pod(static_cast<int32_t>(field_config.levels));
    w.pod(static_cast<int32_t>(field_config.min_res));
    w.pod(static_cast<int32_t>(field_config.max_res));
    w.pod(static_cast<int32_t>(field_config.table_size_log2));
    w.pod(static_cast<int32_t>(field_config.feature_dim));
    w.pod(static_cast<uint8_t>(field_config.opacity_activation));
    w.pod(static_cast<uint8_t>(0));
    w.pod(static_cast<uint16_t>(0));
    w.pod(field_seed);
    write_spec(w, gamma_spec);
    for (const auto& cs : color_spec) write_spec(w, cs);
    w.pod(static_cast<uint32_t>(theta_specs.size()));
    for (const auto& ts : theta_specs) write_spec(w, ts);
    w.pod(static_cast<uint32_t>(kStreamCount));
    for (int s = 0; s < kStreamCount; ++s) {
        w.pod(static_cast<uint8_t>(s + 1));
        w.pod(static_cast<uint64_t>(streams[s].size()));
        w.pod(crc32(streams[s]));
    }
    for (int s = 0; s < kStreamCount; ++s) w.raw(streams[s]);
    return w.bytes;
}

CompressedScene CompressedScene::parse(std::span<const uint8_t> bytes) {
    Reader r{bytes};
    if (r.pod<uint32_t>() != kMagic) throw ContainerError("bad container magic");
    if (r.pod<uint16_t>() != kVersion) throw ContainerError("unsupported container version");
    CompressedScene out;
    out.has_field = r.pod<uint16_t>() & 1;
    out.gaussian_count = r.pod<uint64_t>();
    out.morton_bits = r.pod<uint8_t>();
    out.position_bits = r.pod<uint8_t>();
    r.pod<uint16_t>();
    out.field_config.levels = r.pod<int32_t>();
    out.field_config.min_res = r.pod<int32_t>();
    out.field_config.max_res = r.pod<int32_t>();
    out.field_config.table_size_log2 = r.pod<int32_t>();
    out.field_config.feature_dim = r.pod<int32_t>();
    out.field_config.opacity_activation = static_cast<OpacityActivation>(r.pod<uint8_t>());
    r.pod<uint8_t>();
    r.pod<uint16_t>();
    out.field_seed = r.pod<uint64_t>();
    out.gamma_spec = read_spec(r);
    for (auto& cs : out.color_spec) cs = read_spec(r);
    uint32_t n_theta = r.pod<uint32_t>();
    for (uint32_t i = 0; i < n_theta; ++i) out.theta_specs.push_back(read_spec(r));
    uint32_t n_streams = r.pod<uint32_t>();
    if (n_streams != kStreamCount) throw ContainerError("unexpected stream count");
    uint64_t lengths[kStreamCount];
    uint32_t crcs[kStreamCount];
    for (uint32_t s = 0; s < n_streams; ++s) {
        uint8_t id = r.pod<uint8_t>();
        if (id != s + 1) throw ContainerError("stream directory out of order");
        lengths[s] = r.pod<uint64_t>();
        crcs[s] = r.pod<uint32_t>();
    }
    for (uint32_t s = 0; s < n_streams; ++s) {
        out.streams[s] = r.raw(lengths[s]);
        if (crc32(out.streams[s]) != crcs[s])
            throw ContainerError(std::string("checksum mismatch in stream ") +
                                 stream_name(static_cast<StreamId>(s + 1)));
    }
    if (r.pos != bytes.size()) throw ContainerError("trailing bytes after container payload");
    return out;
}

void CompressedScene::save(const std::string& path) const {
    auto bytes = serialize();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContainerError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
    if (!out) throw ContainerError("write failure on " + path);
}

CompressedScene CompressedScene::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContainerError("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return parse(bytes);
}

std::size_t CompressedScene::payload_bytes() const {
    std::size_t total = 0;
    for (const auto& s : streams) total += s.size();
    return total;
}

std::size_t CompressedScene::header_bytes() const { return serialize().size() - payload_bytes(); }

namespace {

std::vector<Vec3> decode_positions_in_encode_order(const CompressedScene& c) {
    std::vector<uint8_t> octree = entropy_decode_bytes(c.streams[0]);
    std::vector<UVec3> coords = octree_decode(octree, c.position_bits, c.gaussian_count);
    std::vector<Vec3> positions(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        Vec3 p;
        for (int a = 0; a < 3; ++a) {
            int32_t v = static_cast<int32_t>(coords[i][static_cast<std::size_t>(a)]) - kCoordOffset;
            p[a] = half_bits_to_double(half_reinterpret_from_int(v));
        }
        positions[i] = p;
    }
    // Octree emission order is Morton over the offset integer coords; the side
    // streams were written in the encode-key order. Recompute those keys.
    std::vector<std::size_t> order(positions.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<SortKey> keys(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i)
        keys[i] = sort_key_for(positions[i], c.morton_bits);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
    std::vector<Vec3> sorted(positions.size());
    for (std::size_t i = 0; i < order.size(); ++i) sorted[i] = positions[order[i]];
    return sorted;
}

}  // namespace

std::vector<Vec3> decode_positions_only(const CompressedScene& compressed) {
    return decode_positions_in_encode_order(compressed);
}

DecodedScene decode_scene(const CompressedScene& c) {
    DecodedScene out;
    std::vector<Vec3> positions = decode_positions_in_encode_order(c);

    std::vector<uint16_t> gamma_codes = entropy_decode(c.streams[1], 1 << c.gamma_spec.bits);
    if (gamma_codes.size() != c.gaussian_count)
        throw ContainerError("base_scale stream count mismatch");
    std::vector<double> gammas = dequantize(gamma_codes, c.gamma_spec);

    std::vector<uint16_t> color_codes = entropy_decode(c.streams[2], 1 << c.color_spec[0].bits);
    if (color_codes.size() != 3 * c.gaussian_count)
        throw ContainerError("base_color stream count mismatch");

    std::vector<uint8_t> packed_b = entropy_decode_bytes(c.streams[3]);
    if (packed_b.size() != (c.gaussian_count + 3) / 4)
        throw ContainerError("bandwidth stream count mismatch");

    if (c.has_field) {
        HashGridField field(c.field_config, c.field_seed);
        std::vector<uint16_t> grid_codes = entropy_decode(c.streams[4], 1 << (c.theta_specs.empty() ? 6 : c.theta_specs[0].bits));
        if (grid_codes.size() != field.grid_params().size())
            throw ContainerError("grid_params stream count mismatch");
        std::vector<double> grid(grid_codes.size());
        std::size_t offset = 0;
        for (int l = 0; l < c.field_config.levels; ++l) {
            std::size_t n = c.field_config.level_entries(l) *
                            static_cast<std::size_t>(c.field_config.feature_dim);
            for (std::size_t i = 0; i < n; ++i)
                grid[offset + i] = dequantize_one(grid_codes[offset + i],
                                                  c.theta_specs[static_cast<std::size_t>(l)]);
            offset += n;
        }
        std::vector<uint8_t> head_bytes = entropy_decode_bytes(c.streams[5]);
        if (head_bytes.size() != field.head_params().size() * 4)
            throw ContainerError("head_params stream count mismatch");
        std::vector<double> heads(field.head_params().size());
        for (std::size_t i = 0; i < heads.size(); ++i) {
            float f;
            std::memcpy(&f, head_bytes.data() + i * 4, 4);
            heads[i] = f;
        }
        field.set_param_vectors(grid, heads);
        out.field = std::move(field);
    }

    out.scene.gaussians.reserve(c.gaussian_count);
    for (std::size_t i = 0; i < c.gaussian_count; ++i) {
        ExplicitAttrs e;
        e.position = positions[i];
        e.base_scale = gammas[i];
        for (int ch = 0; ch < 3; ++ch)
            e.base_color[ch] =
                dequantize_one(color_codes[static_cast<std::size_t>(ch) * c.gaussian_count + i],
                               c.color_spec[ch]);
        e.bandwidth = (packed_b[i / 4] >> (2 * (i % 4))) & 3;

        ImplicitAttrs imp;
        if (out.field) {
            imp = out.field->eval_implicit(e.position, e.bandwidth);
        } else {
            imp.opacity = 1.0;
            imp.bandwidth = e.bandwidth;
        }
        imp.bandwidth = e.bandwidth;
        out.scene.gaussians.push_back(compose_attrs(e, imp));
        out.explicit_attrs.push_back(e);
    }
    out.scene.position_precision = PositionPrecision::Half;
    out.scene.recompute_bounds();
    return out;
}

ContainerStats container_stats(const CompressedScene& c) {
    ContainerStats s;
    s.position = c.streams[0].size();
    s.scale = c.streams[1].size();
    s.color = c.streams[2].size();
    s.mask = c.streams[3].size();
    s.hash_mlp = c.streams[4].size() + c.streams[5].size();
    s.total = s.position + s.scale + s.color + s.mask + s.hash_mlp;
    s.header = c.header_bytes();
    s.gaussian_count = c.gaussian_count;
    return s;
}

std::string ContainerStats::to_json() const {
    std::ostringstream out;
    out << "{\n"
        << "  \"Position\": " << position << ",\n"
        << "  \"Color\": " << color << ",\n"
        << "  \"Scale\": " << scale << ",\n"
        << "  \"Mask\": " << mask << ",\n"
        << "  \"Hash+MLP\": " << hash_mlp << ",\n"
        << "  \"Total\": " << total << ",\n"
        << "  \"header_bytes\": " << header << ",\n"
        << "  \"gaussian_count\": " << gaussian_count << "\n"
        << "}";
    return out.str();
}

}  // namespace locogs
