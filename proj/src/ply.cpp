#include "locogs/ply.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace locogs {

namespace {

constexpr const char* kPrecisionComment = "locogs position_precision=half";

// Raw logits beyond this saturate float precision; save clamps so files stay finite.
constexpr double kMaxLogit = 40.0;

struct Layout {
    long x = -1, y = -1, z = -1;
    long f_dc[3] = {-1, -1, -1};
    long f_rest0 = -1;  // first f_rest column; count contiguous
    int f_rest_count = 0;
    long opacity = -1;
    long scale[3] = {-1, -1, -1};
    long rot[4] = {-1, -1, -1, -1};
    std::vector<std::pair<std::string, long>> extras;  // unrecognized float columns
    long stride = 0;                                   // floats per vertex
};

int bandwidth_for_rest_count(int n) {
    switch (n) {
        case 0: return 0;
        case 9: return 1;
        case 24: return 2;
        case 45: return 3;
        default: return -1;
    }
}

}  // namespace

SplatScene load_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PlyError("cannot open " + path);

    std::string line;
    if (!std::getline(in, line) || line != "ply") throw PlyError("malformed header: missing ply magic");
    if (!std::getline(in, line) || line.rfind("format binary_little_endian", 0) != 0)
        throw PlyError("malformed header: expected binary_little_endian format");

    SplatScene scene;
    std::size_t vertex_count = 0;
    bool in_vertex_element = false;
    Layout layout;
    std::vector<std::string> prop_names;

    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "end_header") break;
        if (tok == "comment") {
            std::string rest = line.substr(std::min<std::size_t>(line.size(), 8));
            if (rest == kPrecisionComment) scene.position_precision = PositionPrecision::Half;
            else scene.metadata["comment." + std::to_string(scene.metadata.size())] = rest;
            continue;
        }
        if (tok == "element") {
            std::string name;
            std::size_t count;
            ls >> name >> count;
            if (name == "vertex") {
                vertex_count = count;
                in_vertex_element = true;
            } else {
                in_vertex_element = false;
                if (count != 0) throw PlyError("unsupported non-vertex element: " + name);
            }
            continue;
        }
        if (tok == "property") {
            if (!in_vertex_element) throw PlyError("property outside vertex element");
            std::string type, name;
            ls >> type >> name;
            if (type == "list") throw PlyError("malformed header: list properties unsupported");
            if (type != "float" && type != "float32")
                throw PlyError("unsupported property type '" + type + "' for " + name);
            prop_names.push_back(name);
            continue;
        }
        if (tok.empty()) continue;
        throw PlyError("malformed header: unexpected token '" + tok + "'");
    }
    if (!in) throw PlyError("malformed header: truncated");

    auto suffix_index = [](const std::string& n, std::size_t prefix, int bound) {
        int idx = -1;
        try {
            idx = std::stoi(n.substr(prefix));
        } catch (const std::exception&) {
            throw PlyError("malformed header: bad property name " + n);
        }
        if (idx < 0 || idx >= bound) throw PlyError("malformed header: bad property name " + n);
        return idx;
    };
    layout.stride = static_cast<long>(prop_names.size());
    for (long i = 0; i < layout.stride; ++i) {
        const std::string& n = prop_names[static_cast<std::size_t>(i)];
        if (n == "x") layout.x = i;
        else if (n == "y") layout.y = i;
        else if (n == "z") layout.z = i;
        else if (n == "opacity") layout.opacity = i;
        else if (n.rfind("f_dc_", 0) == 0) layout.f_dc[suffix_index(n, 5, 3)] = i;
        else if (n.rfind("scale_", 0) == 0) layout.scale[suffix_index(n, 6, 3)] = i;
        else if (n.rfind("rot_", 0) == 0) layout.rot[suffix_index(n, 4, 4)] = i;
        else if (n.rfind("f_rest_", 0) == 0) {
            if (suffix_index(n, 7, kShRestScalars) == 0) layout.f_rest0 = i;
            layout.f_rest_count++;
        } else layout.extras.emplace_back(n, i);
    }
    if (layout.x < 0 || layout.y < 0 || layout.z < 0 || layout.opacity < 0 ||
        layout.f_dc[0] < 0 || layout.f_dc[1] < 0 || layout.f_dc[2] < 0 || layout.scale[0] < 0 ||
        layout.scale[1] < 0 || layout.scale[2] < 0 || layout.rot[0] < 0 || layout.rot[1] < 0 ||
        layout.rot[2] < 0 || layout.rot[3] < 0)
        throw PlyError("field count mismatch: required splat field missing");
    int bandwidth = bandwidth_for_rest_count(layout.f_rest_count);
    if (bandwidth < 0)
        throw PlyError("field count mismatch: f_rest count " + std::to_string(layout.f_rest_count));

    std::vector<float> row(static_cast<std::size_t>(layout.stride));
    scene.gaussians.reserve(vertex_count);
    for (const auto& extra : layout.extras) {
        scene.extra_fields.push_back({extra.first, {}});
        scene.extra_fields.back().values.reserve(vertex_count);
    }

    int per_channel = layout.f_rest_count / 3;
    for (std::size_t v = 0; v < vertex_count; ++v) {
        in.read(reinterpret_cast<char*>(row.data()), layout.stride * 4);
        if (!in) throw PlyError("truncated vertex data at record " + std::to_string(v));

        Gaussian g;
        g.position = {row[layout.x], row[layout.y], row[layout.z]};
        g.opacity = sigmoid(row[layout.opacity]);
        g.scale = {std::exp(static_cast<double>(row[layout.scale[0]])),
                   std::exp(static_cast<double>(row[layout.scale[1]])),
                   std::exp(static_cast<double>(row[layout.scale[2]]))};
        Quat q{row[layout.rot[0]], row[layout.rot[1]], row[layout.rot[2]], row[layout.rot[3]]};
        double n2 = dot(q, q);
        if (!std::isfinite(n2) || n2 <= 0.0)
            throw PlyError("NaN/Inf or zero rotation at record " + std::to_string(v));
        // Skip renormalization when already unit within float precision, so a
        // save/load cycle is byte-stable.
        g.rotation = std::fabs(n2 - 1.0) < 1e-6 ? q : normalized(q);
        g.sh[0] = {row[layout.f_dc[0]], row[layout.f_dc[1]], row[layout.f_dc[2]]};
        // f_rest is channel-major: all coefficients of channel 0, then 1, then 2.
        for (int c = 0; c < per_channel; ++c)
            for (int ch = 0; ch < 3; ++ch)
                g.sh[c + 1][ch] = row[layout.f_rest0 + ch * per_channel + c];
        g.bandwidth = bandwidth;

        if (!all_finite(g.position) || !std::isfinite(g.opacity) || !all_finite(g.scale) ||
            !all_finite(g.rotation) || !all_finite(g.sh[0]))
            throw PlyError("NaN/Inf attribute at record " + std::to_string(v));
        for (int c = 1; c <= per_channel; ++c)
            if (!all_finite(g.sh[c])) throw PlyError("NaN/Inf attribute at record " + std::to_string(v));

        for (std::size_t e = 0; e < layout.extras.size(); ++e)
            scene.extra_fields[e].values.push_back(row[layout.extras[e].second]);
        scene.gaussians.push_back(g);
    }
    scene.recompute_bounds();
    return scene;
}

void save_ply(const SplatScene& scene, const std::string& path) {
    int max_bandwidth = 0;
    for (const auto& g : scene.gaussians) max_bandwidth = std::max(max_bandwidth, g.bandwidth);
    int per_channel = sh_coeffs_for_bandwidth(max_bandwidth) - 1;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw PlyError("cannot write " + path);

    out << "ply\nformat binary_little_endian 1.0\n";
    if (scene.position_precision == PositionPrecision::Half)
        out << "comment " << kPrecisionComment << "\n";
    for (const auto& [k, v] : scene.metadata)
        if (k.rfind("comment.", 0) == 0) out << "comment " << v << "\n";
    out << "element vertex " << scene.gaussians.size() << "\n";
    auto prop = [&](const std::string& n) { out << "property float " << n << "\n"; };
    prop("x"); prop("y"); prop("z");
    for (int i = 0; i < 3; ++i) prop("f_dc_" + std::to_string(i));
    for (int i = 0; i < per_channel * 3; ++i) prop("f_rest_" + std::to_string(i));
    prop("opacity");
    for (int i = 0; i < 3; ++i) prop("scale_" + std::to_string(i));
    for (int i = 0; i < 4; ++i) prop("rot_" + std::to_string(i));
    for (const auto& e : scene.extra_fields) prop(e.name);
    out << "end_header\n";

    std::vector<float> row;
    row.reserve(17 + static_cast<std::size_t>(per_channel) * 3 + scene.extra_fields.size());
    for (std::size_t v = 0; v < scene.gaussians.size(); ++v) {
        const Gaussian& g = scene.gaussians[v];
        row.clear();
        row.push_back(static_cast<float>(g.position.x));
        row.push_back(static_cast<float>(g.position.y));
        row.push_back(static_cast<float>(g.position.z));
        for (int ch = 0; ch < 3; ++ch) row.push_back(static_cast<float>(g.sh[0][ch]));
        for (int ch = 0; ch < 3; ++ch)
            for (int c = 0; c < per_channel; ++c) row.push_back(static_cast<float>(g.sh[c + 1][ch]));
        double logit = inv_sigmoid(std::clamp(g.opacity, 0.0, 1.0));
        row.push_back(static_cast<float>(std::clamp(logit, -kMaxLogit, kMaxLogit)));
        for (int a = 0; a < 3; ++a) row.push_back(static_cast<float>(std::log(g.scale[a])));
        for (int a = 0; a < 4; ++a) row.push_back(static_cast<float>(g.rotation[a]));
        for (const auto& e : scene.extra_fields) row.push_back(e.values[v]);
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<long>(row.size()) * 4);
    }
    if (!out) throw PlyError("write failure on " + path);
}

}  // namespace locogs
