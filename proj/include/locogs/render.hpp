// CPU reference splatter: perspective EWA projection, global depth sort,
// per-pixel front-to-back alpha compositing, real spherical harmonics shading,
// and PSNR/SSIM metrics. A cached training graph provides exact reverse-mode
// gradients with respect to every gaussian attribute.
#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "locogs/model.hpp"

namespace locogs {

class RenderError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Camera {
    double fx = 100.0, fy = 100.0, cx = 0.0, cy = 0.0;
    int width = 0, height = 0;
    Mat3 rotation;     // world-to-camera
    Vec3 translation;  // x_cam = R x_world + t

    static Camera look_at(const Vec3& position, const Vec3& target, const Vec3& up,
                          double fov_y_deg, int width, int height);
    Vec3 center() const;  // camera position in world coordinates
    void validate() const;
};

// Planar RGB float32 storage (channel-major), the external image type.
struct Image {
    int width = 0, height = 0;
    std::vector<float> planes;  // [3][height][width]

    float& at(int c, int y, int x) { return planes[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return planes[(static_cast<std::size_t>(c) * height + y) * width + x]; }
};

// Double-precision working buffer used by rendering and the training losses.
struct RenderBuffer {
    int width = 0, height = 0;
    std::vector<double> planes;  // [3][height][width]

    RenderBuffer() = default;
    RenderBuffer(int w, int h) : width(w), height(h), planes(static_cast<std::size_t>(3) * w * h, 0.0) {}
    double& at(int c, int y, int x) { return planes[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return planes[(static_cast<std::size_t>(c) * height + y) * width + x]; }

    Image to_image() const;
    static RenderBuffer from_image(const Image& img);
};

struct RenderOptions {
    Vec3 background{0.0, 0.0, 0.0};
    double alpha_min = 1.0 / 255.0;     // contributions below this are skipped
    double alpha_max = 0.999;           // compositing cap
    double transmittance_min = 1e-4;    // early termination per pixel
    double footprint_sigma = 3.0;       // screen-space cutoff radius
    double screen_blur = 0.3;           // added to the 2D covariance diagonal
    double z_near = 0.01;
    // Row bands render independently, so the image is identical at any count.
    int threads = 1;
};

// View-dependent color from SH blocks for bandwidth b; the conventional 0.5
// offset is added and the result clamped to >= 0.
Vec3 sh_color(const std::array<Vec3, kShCoeffCount>& sh, int bandwidth, const Vec3& direction);

// Opacity times the anisotropic falloff of a gaussian at a world point.
double gaussian_alpha(const Gaussian& g, const Vec3& x);

RenderBuffer render(const SplatScene& scene, const Camera& camera, const RenderOptions& opts = {});
Image render_image(const SplatScene& scene, const Camera& camera, const RenderOptions& opts = {});

// Per-gaussian gradients of a scalar function of the rendered image.
struct SceneGrads {
    std::vector<Vec3> d_position;
    std::vector<double> d_opacity;
    std::vector<Vec3> d_scale;
    std::vector<Quat> d_rotation;
    std::vector<std::array<Vec3, kShCoeffCount>> d_sh;

    explicit SceneGrads(std::size_t n)
        : d_position(n), d_opacity(n, 0.0), d_scale(n), d_rotation(n, Quat{0, 0, 0, 0}), d_sh(n) {}
};

// Forward render that keeps per-pixel compositing records so backward() can
// run exact reverse-mode. Intended for desk-scale training scenes.
class RenderGraph {
public:
    struct Splat;

    // Holds a reference to the scene for backward(); the scene must outlive
    // the graph, so temporaries are rejected.
    RenderGraph(const SplatScene& scene, const Camera& camera, const RenderOptions& opts = {});
    RenderGraph(SplatScene&&, const Camera&, const RenderOptions& = {}) = delete;
    ~RenderGraph();
    const RenderBuffer& image() const { return image_; }
    SceneGrads backward(const RenderBuffer& d_pixels) const;

private:
    struct Contribution {
        uint32_t splat;
        double alpha;
        double transmittance;  // before compositing this splat
    };
    const SplatScene& scene_;
    Camera camera_;
    RenderOptions opts_;
    RenderBuffer image_;
    std::vector<Splat> splats_;
    std::vector<std::vector<Contribution>> pixels_;  // per pixel, depth order
};

double psnr(const Image& a, const Image& b);
double ssim(const Image& a, const Image& b);
double psnr(const RenderBuffer& a, const RenderBuffer& b);
double ssim(const RenderBuffer& a, const RenderBuffer& b);
// SSIM value plus dSSIM/da for the loss path.
double ssim_with_grad(const RenderBuffer& a, const RenderBuffer& b, RenderBuffer& d_a);

}  // namespace locogs
