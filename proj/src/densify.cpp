#include "locogs/densify.hpp"

#include <cmath>

#include "locogs/rng.hpp"

namespace locogs {

DensityField DensityField::constant_slab(double z_lo, double z_hi, double density,
                                         const Vec3& color) {
    return {[=](const Vec3& x) { return (x.z >= z_lo && x.z <= z_hi) ? density : 0.0; },
            [=](const Vec3&) { return color; }};
}

DensityField DensityField::sphere_shell(const Vec3& center, double radius, double thickness,
                                        double density, const Vec3& color) {
    return {[=](const Vec3& x) {
                double r = norm(x - center);
                return std::fabs(r - radius) <= 0.5 * thickness ? density : 0.0;
            },
            [=](const Vec3&) { return color; }};
}

DensityField DensityField::axis_gradient(double density_scale) {
    return {[=](const Vec3& x) { return density_scale * std::fmax(0.0, x.z); },
            [](const Vec3& x) {
                return Vec3{std::clamp(0.5 + 0.25 * x.x, 0.0, 1.0),
                            std::clamp(0.5 + 0.25 * x.y, 0.0, 1.0),
                            std::clamp(0.5 + 0.25 * x.z, 0.0, 1.0)};
            }};
}

DensityField DensityField::vacuum() {
    return {[](const Vec3&) { return 0.0; }, [](const Vec3&) { return Vec3{}; }};
}

void Ray::validate() const {
    if (samples < 1) throw DensifyError("ray needs at least one sample");
    if (!(near < far)) throw DensifyError("ray needs near < far");
    if (std::fabs(norm(direction) - 1.0) > 1e-9) throw DensifyError("ray direction must be unit");
}

CompositeResult composite(const Ray& ray, const DensityField& field) {
    ray.validate();
    CompositeResult result;
    const int n = ray.samples;
    const double delta = (ray.far - ray.near) / n;
    result.alphas.resize(static_cast<std::size_t>(n));
    result.depths.resize(static_cast<std::size_t>(n));
    result.transmittances.resize(static_cast<std::size_t>(n) + 1);

    double t_acc = 1.0;
    Vec3 color{};
    for (int i = 0; i < n; ++i) {
        double t = ray.near + (i + 0.5) * delta;  // midpoint sampling
        Vec3 x = ray.at(t);
        double alpha = 1.0 - std::exp(-field.sigma(x) * delta);
        result.transmittances[static_cast<std::size_t>(i)] = t_acc;
        result.alphas[static_cast<std::size_t>(i)] = alpha;
        result.depths[static_cast<std::size_t>(i)] = t;
        color += field.color(x) * (t_acc * alpha);
        t_acc *= 1.0 - alpha;
    }
    result.transmittances[static_cast<std::size_t>(n)] = t_acc;
    result.color = color;
    return result;
}

std::optional<double> median_depth(const CompositeResult& composited) {
    for (std::size_t i = 0; i < composited.alphas.size(); ++i) {
        if (composited.transmittances[i + 1] < 0.5) return composited.depths[i];
    }
    return std::nullopt;
}

std::optional<double> median_depth(const Ray& ray, const DensityField& field) {
    return median_depth(composite(ray, field));
}

std::vector<DensePoint> sample_dense_points(const DensityField& field,
                                            const std::vector<Camera>& cameras,
                                            const DenseSampleOptions& opts, uint64_t seed) {
    if (cameras.empty()) throw DensifyError("at least one camera required");
    for (const auto& cam : cameras) cam.validate();

    Rng rng(seed);
    std::vector<DensePoint> points;
    points.reserve(opts.ray_count);
    for (std::size_t k = 0; k < opts.ray_count; ++k) {
        const Camera& cam = cameras[rng.below(cameras.size())];
        double px = static_cast<double>(rng.below(static_cast<uint64_t>(cam.width))) + 0.5;
        double py = static_cast<double>(rng.below(static_cast<uint64_t>(cam.height))) + 0.5;
        // Pixel ray in world space.
        Vec3 dir_cam{(px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0};
        Vec3 dir = normalized(cam.rotation.transposed() * dir_cam);
        Ray ray{cam.center(), dir, opts.near, opts.far, opts.samples_per_ray};
        CompositeResult comp = composite(ray, field);
        auto z = median_depth(comp);
        if (!z) continue;
        points.push_back({ray.at(*z), comp.color});
    }
    if (points.empty()) throw DensifyError("no ray found a surface");
    return points;
}

SplatScene dense_points_to_scene(const std::vector<DensePoint>& points) {
    SplatScene scene;
    scene.gaussians.reserve(points.size());
    constexpr double kShBase = 0.28209479177387814;
    for (const auto& p : points) {
        Gaussian g;
        g.position = p.position;
        g.opacity = 0.5;
        g.scale = {0.01, 0.01, 0.01};
        g.rotation = Quat{1, 0, 0, 0};
        g.bandwidth = 0;
        // Invert the shading offset so the rendered base color matches.
        g.sh[0] = (p.color - Vec3{0.5, 0.5, 0.5}) / kShBase;
        scene.gaussians.push_back(g);
    }
    scene.recompute_bounds();
    return scene;
}

}  // namespace locogs
