// Dense initialization from a volumetric oracle: uniform ray marching with
// front-to-back alpha accumulation, median-depth extraction at the
// transmittance-0.5 crossing, and back-projection of training-view pixels
// into a colored point cloud.
#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "locogs/model.hpp"
#include "locogs/render.hpp"

namespace locogs {

class DensifyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DensityField {
    std::function<double(const Vec3&)> sigma;  // non-negative density
    std::function<Vec3(const Vec3&)> color;    // components in [0,1]

    // Analytic test fields.
    static DensityField constant_slab(double z_lo, double z_hi, double density, const Vec3& color);
    static DensityField sphere_shell(const Vec3& center, double radius, double thickness,
                                     double density, const Vec3& color);
    static DensityField axis_gradient(double density_scale);
    static DensityField vacuum();
};

struct Ray {
    Vec3 origin;
    Vec3 direction;  // unit
    double near = 0.0;
    double far = 1.0;
    int samples = 64;

    void validate() const;
    Vec3 at(double t) const { return origin + direction * t; }
};

struct CompositeResult {
    Vec3 color;
    std::vector<double> alphas;          // per sample
    std::vector<double> transmittances;  // T_i before sample i, size samples + 1
    std::vector<double> depths;          // sample midpoints t_i
};

CompositeResult composite(const Ray& ray, const DensityField& field);

// Depth at the first sample whose compositing drops transmittance below 0.5;
// empty when the ray never crosses (no surface).
std::optional<double> median_depth(const Ray& ray, const DensityField& field);
std::optional<double> median_depth(const CompositeResult& composited);

struct DensePoint {
    Vec3 position;
    Vec3 color;
};

struct DenseSampleOptions {
    std::size_t ray_count = 100000;
    int samples_per_ray = 256;
    double near = 0.05;
    double far = 20.0;
};

// Back-projects uniformly sampled training-view pixels through their median
// depth. Deterministic under seed; throws when no ray finds a surface.
std::vector<DensePoint> sample_dense_points(const DensityField& field,
                                            const std::vector<Camera>& cameras,
                                            const DenseSampleOptions& opts, uint64_t seed);

// Writes the point cloud as a splat PLY usable as a training initialization.
SplatScene dense_points_to_scene(const std::vector<DensePoint>& points);

}  // namespace locogs
