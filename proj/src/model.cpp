#include "locogs/model.hpp"

#include <cmath>

#include "locogs/half.hpp"

namespace locogs {

void validate(const Gaussian& g, std::size_t index) {
    auto fail = [index](const std::string& what) {
        throw ModelError("gaussian " + std::to_string(index) + ": " + what);
    };
    if (!all_finite(g.position)) fail("non-finite position");
    if (!std::isfinite(g.opacity) || g.opacity < 0.0 || g.opacity > 1.0)
        fail("opacity outside [0,1]");
    if (!all_finite(g.scale) || g.scale.x <= 0.0 || g.scale.y <= 0.0 || g.scale.z <= 0.0)
        fail("non-positive scale");
    if (!all_finite(g.rotation)) fail("non-finite rotation");
    if (std::fabs(norm(g.rotation) - 1.0) > 1e-6) fail("rotation not unit");
    if (g.bandwidth < 0 || g.bandwidth > kMaxShDegree) fail("bandwidth outside {0..3}");
    for (int c = 0; c < kShCoeffCount; ++c) {
        if (!all_finite(g.sh[c])) fail("non-finite SH coefficient");
        if (c >= sh_coeffs_for_bandwidth(g.bandwidth) && !(g.sh[c] == Vec3{}))
            fail("SH coefficient beyond bandwidth not zero");
    }
}

void validate(const SplatScene& scene) {
    for (std::size_t i = 0; i < scene.gaussians.size(); ++i) validate(scene.gaussians[i], i);
    for (const auto& g : scene.gaussians)
        if (!scene.bounds.contains(g.position))
            throw ModelError("scene bounds do not contain every position");
}

std::pair<ExplicitAttrs, ImplicitAttrs> split_attrs(const Gaussian& g) {
    double gamma = max_component(g.scale);
    if (!(gamma > 0.0)) throw ModelError("split_attrs: zero scale vector");
    ExplicitAttrs e;
    e.position = g.position;
    e.base_scale = gamma;
    e.base_color = g.sh[0];
    e.bandwidth = g.bandwidth;

    ImplicitAttrs i;
    i.opacity = g.opacity;
    i.norm_scale = g.scale / gamma;
    i.rotation = g.rotation;
    i.bandwidth = g.bandwidth;
    for (int c = 1; c < sh_coeffs_for_bandwidth(g.bandwidth); ++c) i.sh_rest[c - 1] = g.sh[c];
    return {e, i};
}

Gaussian compose_attrs(const ExplicitAttrs& e, const ImplicitAttrs& i) {
    if (e.bandwidth != i.bandwidth) throw ModelError("compose_attrs: SH block-count mismatch");
    Gaussian g;
    g.position = e.position;
    g.opacity = i.opacity;
    g.scale = i.norm_scale * e.base_scale;
    g.rotation = i.rotation;
    g.bandwidth = e.bandwidth;
    g.sh[0] = e.base_color;
    for (int c = 1; c < sh_coeffs_for_bandwidth(e.bandwidth); ++c) g.sh[c] = i.sh_rest[c - 1];
    return g;
}

Mat3 covariance(const Gaussian& g) {
    Mat3 r = quat_to_mat(g.rotation);
    Mat3 s2 = Mat3::diagonal(cwise_mul(g.scale, g.scale));
    return r * s2 * r.transposed();
}

SplatScene quantize_positions_to_half(const SplatScene& scene) {
    SplatScene out = scene;
    for (auto& g : out.gaussians) {
        for (int a = 0; a < 3; ++a)
            g.position[a] = half_bits_to_double(double_to_half_bits(g.position[a]));
    }
    out.position_precision = PositionPrecision::Half;
    out.recompute_bounds();
    return out;
}

}  // namespace locogs
