#include "locogs/render.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace locogs {

namespace {

// Real SH basis constants, 3DGS conventions.
constexpr double kSH0 = 0.28209479177387814;
constexpr double kSH1 = 0.4886025119029199;
constexpr double kSH2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                            -1.0925484305920792, 0.5462742152960396};
constexpr double kSH3[7] = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                            0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                            -0.5900435899266435};

// Basis values for degrees 0..3 at direction d (assumed unit).
void sh_basis(const Vec3& d, int bandwidth, double basis[kShCoeffCount]) {
    double x = d.x, y = d.y, z = d.z;
    basis[0] = kSH0;
    if (bandwidth < 1) return;
    basis[1] = -kSH1 * y;
    basis[2] = kSH1 * z;
    basis[3] = -kSH1 * x;
    if (bandwidth < 2) return;
    double xx = x * x, yy = y * y, zz = z * z;
    basis[4] = kSH2[0] * x * y;
    basis[5] = kSH2[1] * y * z;
    basis[6] = kSH2[2] * (2.0 * zz - xx - yy);
    basis[7] = kSH2[3] * x * z;
    basis[8] = kSH2[4] * (xx - yy);
    if (bandwidth < 3) return;
    basis[9] = kSH3[0] * y * (3.0 * xx - yy);
    basis[10] = kSH3[1] * x * y * z;
    basis[11] = kSH3[2] * y * (4.0 * zz - xx - yy);
    basis[12] = kSH3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    basis[13] = kSH3[4] * x * (4.0 * zz - xx - yy);
    basis[14] = kSH3[5] * z * (xx - yy);
    basis[15] = kSH3[6] * x * (xx - 3.0 * yy);
}

// d(basis_j)/d(direction) for the active degrees.
void sh_basis_grad(const Vec3& d, int bandwidth, Vec3 grad[kShCoeffCount]) {
    double x = d.x, y = d.y, z = d.z;
    for (int i = 0; i < kShCoeffCount; ++i) grad[i] = Vec3{};
    if (bandwidth < 1) return;
    grad[1] = {0.0, -kSH1, 0.0};
    grad[2] = {0.0, 0.0, kSH1};
    grad[3] = {-kSH1, 0.0, 0.0};
    if (bandwidth < 2) return;
    grad[4] = {kSH2[0] * y, kSH2[0] * x, 0.0};
    grad[5] = {0.0, kSH2[1] * z, kSH2[1] * y};
    grad[6] = {-2.0 * kSH2[2] * x, -2.0 * kSH2[2] * y, 4.0 * kSH2[2] * z};
    grad[7] = {kSH2[3] * z, 0.0, kSH2[3] * x};
    grad[8] = {2.0 * kSH2[4] * x, -2.0 * kSH2[4] * y, 0.0};
    if (bandwidth < 3) return;
    grad[9] = {kSH3[0] * 6.0 * x * y, kSH3[0] * (3.0 * x * x - 3.0 * y * y), 0.0};
    grad[10] = {kSH3[1] * y * z, kSH3[1] * x * z, kSH3[1] * x * y};
    grad[11] = {-2.0 * kSH3[2] * x * y, kSH3[2] * (4.0 * z * z - x * x - 3.0 * y * y),
                kSH3[2] * 8.0 * y * z};
    grad[12] = {-6.0 * kSH3[3] * x * z, -6.0 * kSH3[3] * y * z,
                kSH3[3] * (6.0 * z * z - 3.0 * x * x - 3.0 * y * y)};
    grad[13] = {kSH3[4] * (4.0 * z * z - 3.0 * x * x - y * y), -2.0 * kSH3[4] * x * y,
                kSH3[4] * 8.0 * x * z};
    grad[14] = {2.0 * kSH3[5] * x * z, -2.0 * kSH3[5] * y * z, kSH3[5] * (x * x - y * y)};
    grad[15] = {kSH3[6] * (3.0 * x * x - 3.0 * y * y), -6.0 * kSH3[6] * x * y, 0.0};
}

}  // namespace

Vec3 sh_color(const std::array<Vec3, kShCoeffCount>& sh, int bandwidth, const Vec3& direction) {
    double basis[kShCoeffCount];
    sh_basis(direction, bandwidth, basis);
    Vec3 c{0.5, 0.5, 0.5};  // conventional offset
    int coeffs = sh_coeffs_for_bandwidth(bandwidth);
    for (int j = 0; j < coeffs; ++j) c += sh[static_cast<std::size_t>(j)] * basis[j];
    return {std::fmax(0.0, c.x), std::fmax(0.0, c.y), std::fmax(0.0, c.z)};
}

double gaussian_alpha(const Gaussian& g, const Vec3& x) {
    Mat3 cov = covariance(g);
    // Solve cov * v = (x - p) via the adjugate inverse.
    double det = cov.det();
    if (det <= 0.0) throw RenderError("gaussian_alpha: singular covariance");
    Mat3 inv;
    inv(0, 0) = (cov(1, 1) * cov(2, 2) - cov(1, 2) * cov(2, 1)) / det;
    inv(0, 1) = (cov(0, 2) * cov(2, 1) - cov(0, 1) * cov(2, 2)) / det;
    inv(0, 2) = (cov(0, 1) * cov(1, 2) - cov(0, 2) * cov(1, 1)) / det;
    inv(1, 0) = inv(0, 1);
    inv(1, 1) = (cov(0, 0) * cov(2, 2) - cov(0, 2) * cov(2, 0)) / det;
    inv(1, 2) = (cov(0, 2) * cov(1, 0) - cov(0, 0) * cov(1, 2)) / det;
    inv(2, 0) = inv(0, 2);
    inv(2, 1) = inv(1, 2);
    inv(2, 2) = (cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0)) / det;
    Vec3 delta = x - g.position;
    double m = dot(delta, inv * delta);
    return g.opacity * std::exp(-0.5 * m);
}

Camera Camera::look_at(const Vec3& position, const Vec3& target, const Vec3& up, double fov_y_deg,
                       int width, int height) {
    Vec3 forward = normalized(target - position);
    Vec3 right = normalized(cross(forward, up));
    Vec3 down = cross(forward, right);  // camera y axis points down the image
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.rotation.m = {right.x, right.y, right.z, down.x, down.y, down.z, forward.x, forward.y, forward.z};
    cam.translation = (cam.rotation * position) * -1.0;
    double f = 0.5 * height / std::tan(0.5 * fov_y_deg * 3.14159265358979323846 / 180.0);
    cam.fx = cam.fy = f;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    return cam;
}

Vec3 Camera::center() const { return (rotation.transposed() * translation) * -1.0; }

void Camera::validate() const {
    if (width <= 0 || height <= 0 || fx <= 0.0 || fy <= 0.0)
        throw RenderError("degenerate camera");
}

Image RenderBuffer::to_image() const {
    Image img;
    img.width = width;
    img.height = height;
    img.planes.resize(planes.size());
    for (std::size_t i = 0; i < planes.size(); ++i) img.planes[i] = static_cast<float>(planes[i]);
    return img;
}

RenderBuffer RenderBuffer::from_image(const Image& img) {
    RenderBuffer buf(img.width, img.height);
    for (std::size_t i = 0; i < buf.planes.size(); ++i) buf.planes[i] = img.planes[i];
    return buf;
}

// Per-splat projection cache shared by the plain renderer and the graph.
struct RenderGraph::Splat {
    uint32_t index;
    double z;
    double u, v;
    double inv_a, inv_b, inv_c;  // 2D precision matrix (symmetric)
    Vec3 color;                  // clamped shading color
    Vec3 pre_color;              // before the >=0 clamp
    Vec3 dir;                    // unit view direction
    double dir_len;
    Vec3 x_cam;
    int x0, x1, y0, y1;  // inclusive pixel bbox
};

namespace {

using Splat = RenderGraph::Splat;

}  // namespace

// Defined outside the anonymous namespace so RenderGraph can befriend it if needed.
static bool project_splat(const Gaussian& g, const Camera& cam, const RenderOptions& opts,
                          uint32_t index, Splat& s) {
    if (g.opacity <= 0.0) return false;
    Vec3 x_cam = cam.rotation * g.position + cam.translation;
    if (x_cam.z <= opts.z_near) return false;

    Mat3 cov_w = covariance(g);
    Mat3 m = cam.rotation * cov_w * cam.rotation.transposed();

    double z = x_cam.z;
    double j00 = cam.fx / z;
    double j02 = -cam.fx * x_cam.x / (z * z);
    double j11 = cam.fy / z;
    double j12 = -cam.fy * x_cam.y / (z * z);

    // Sigma2D = J M J^T + blur I with J = [[j00,0,j02],[0,j11,j12]].
    double a = j00 * (j00 * m(0, 0) + j02 * m(2, 0)) + j02 * (j00 * m(0, 2) + j02 * m(2, 2)) +
               opts.screen_blur;
    double b = j00 * (j11 * m(0, 1) + j12 * m(0, 2)) + j02 * (j11 * m(2, 1) + j12 * m(2, 2));
    double c = j11 * (j11 * m(1, 1) + j12 * m(2, 1)) + j12 * (j11 * m(1, 2) + j12 * m(2, 2)) +
               opts.screen_blur;
    double det = a * c - b * b;
    if (det <= 0.0) return false;

    s.index = index;
    s.z = z;
    s.x_cam = x_cam;
    s.u = cam.fx * x_cam.x / z + cam.cx;
    s.v = cam.fy * x_cam.y / z + cam.cy;
    s.inv_a = c / det;
    s.inv_b = -b / det;
    s.inv_c = a / det;

    double mid = 0.5 * (a + c);
    double disc = std::sqrt(std::fmax(0.0, mid * mid - det));
    double radius = opts.footprint_sigma * std::sqrt(std::fmax(1e-12, mid + disc));
    s.x0 = std::max(0, static_cast<int>(std::floor(s.u - radius)));
    s.x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(s.u + radius)));
    s.y0 = std::max(0, static_cast<int>(std::floor(s.v - radius)));
    s.y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(s.v + radius)));
    if (s.x0 > s.x1 || s.y0 > s.y1) return false;

    Vec3 to_gaussian = g.position - cam.center();
    s.dir_len = norm(to_gaussian);
    if (s.dir_len <= 0.0) return false;
    s.dir = to_gaussian / s.dir_len;
    double basis[kShCoeffCount];
    sh_basis(s.dir, g.bandwidth, basis);
    Vec3 pre{0.5, 0.5, 0.5};
    for (int j = 0; j < sh_coeffs_for_bandwidth(g.bandwidth); ++j)
        pre += g.sh[static_cast<std::size_t>(j)] * basis[j];
    s.pre_color = pre;
    s.color = {std::fmax(0.0, pre.x), std::fmax(0.0, pre.y), std::fmax(0.0, pre.z)};
    return true;
}

static std::vector<Splat> project_scene(const SplatScene& scene, const Camera& cam,
                                        const RenderOptions& opts) {
    std::vector<Splat> splats;
    splats.reserve(scene.gaussians.size());
    for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
        Splat s;
        if (project_splat(scene.gaussians[i], cam, opts, static_cast<uint32_t>(i), s))
            splats.push_back(s);
    }
    std::stable_sort(splats.begin(), splats.end(),
                     [](const Splat& a, const Splat& b) { return a.z < b.z; });
    return splats;
}

namespace {

// Rasterizes the depth-sorted splats into the row band [y_begin, y_end).
void raster_band(const SplatScene& scene, const Camera& cam, const RenderOptions& opts,
                 const std::vector<Splat>& splats, int y_begin, int y_end, RenderBuffer& buf,
                 std::vector<double>& transmittance) {
    for (const Splat& s : splats) {
        double opacity = scene.gaussians[s.index].opacity;
        int y0 = std::max(s.y0, y_begin), y1 = std::min(s.y1, y_end - 1);
        for (int y = y0; y <= y1; ++y) {
            for (int x = s.x0; x <= s.x1; ++x) {
                std::size_t px = static_cast<std::size_t>(y) * cam.width + x;
                double& t = transmittance[px];
                if (t < opts.transmittance_min) continue;
                double dx = (x + 0.5) - s.u;
                double dy = (y + 0.5) - s.v;
                double sigma = 0.5 * (s.inv_a * dx * dx + s.inv_c * dy * dy) + s.inv_b * dx * dy;
                if (sigma < 0.0) continue;
                double alpha = std::fmin(opts.alpha_max, opacity * std::exp(-sigma));
                if (alpha < opts.alpha_min) continue;
                double w = t * alpha;
                buf.at(0, y, x) += w * s.color.x;
                buf.at(1, y, x) += w * s.color.y;
                buf.at(2, y, x) += w * s.color.z;
                t *= 1.0 - alpha;
            }
        }
    }
}

}  // namespace

RenderBuffer render(const SplatScene& scene, const Camera& cam, const RenderOptions& opts) {
    cam.validate();
    RenderBuffer buf(cam.width, cam.height);
    std::vector<double> transmittance(static_cast<std::size_t>(cam.width) * cam.height, 1.0);
    std::vector<Splat> splats = project_scene(scene, cam, opts);

    int threads = std::max(1, std::min(opts.threads, cam.height));
    if (threads == 1) {
        raster_band(scene, cam, opts, splats, 0, cam.height, buf, transmittance);
    } else {
        std::vector<std::thread> pool;
        int band = (cam.height + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            int y0 = t * band, y1 = std::min(cam.height, y0 + band);
            if (y0 >= y1) break;
            pool.emplace_back([&, y0, y1] {
                raster_band(scene, cam, opts, splats, y0, y1, buf, transmittance);
            });
        }
        for (auto& th : pool) th.join();
    }
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            double t = transmittance[static_cast<std::size_t>(y) * cam.width + x];
            buf.at(0, y, x) += t * opts.background.x;
            buf.at(1, y, x) += t * opts.background.y;
            buf.at(2, y, x) += t * opts.background.z;
        }
    return buf;
}

Image render_image(const SplatScene& scene, const Camera& cam, const RenderOptions& opts) {
    return render(scene, cam, opts).to_image();
}

RenderGraph::~RenderGraph() = default;

RenderGraph::RenderGraph(const SplatScene& scene, const Camera& camera, const RenderOptions& opts)
    : scene_(scene), camera_(camera), opts_(opts) {
    camera_.validate();
    image_ = RenderBuffer(camera_.width, camera_.height);
    pixels_.resize(static_cast<std::size_t>(camera_.width) * camera_.height);
    std::vector<double> transmittance(pixels_.size(), 1.0);
    splats_ = project_scene(scene_, camera_, opts_);

    for (std::size_t si = 0; si < splats_.size(); ++si) {
        const Splat& s = splats_[si];
        double opacity = scene_.gaussians[s.index].opacity;
        for (int y = s.y0; y <= s.y1; ++y) {
            for (int x = s.x0; x <= s.x1; ++x) {
                std::size_t px = static_cast<std::size_t>(y) * camera_.width + x;
                double& t = transmittance[px];
                if (t < opts_.transmittance_min) continue;
                double dx = (x + 0.5) - s.u;
                double dy = (y + 0.5) - s.v;
                double sigma = 0.5 * (s.inv_a * dx * dx + s.inv_c * dy * dy) + s.inv_b * dx * dy;
                if (sigma < 0.0) continue;
                double alpha = std::fmin(opts_.alpha_max, opacity * std::exp(-sigma));
                if (alpha < opts_.alpha_min) continue;
                double w = t * alpha;
                image_.at(0, y, x) += w * s.color.x;
                image_.at(1, y, x) += w * s.color.y;
                image_.at(2, y, x) += w * s.color.z;
                pixels_[px].push_back({static_cast<uint32_t>(si), alpha, t});
                t *= 1.0 - alpha;
            }
        }
    }
    for (int y = 0; y < camera_.height; ++y)
        for (int x = 0; x < camera_.width; ++x) {
            double t = transmittance[static_cast<std::size_t>(y) * camera_.width + x];
            image_.at(0, y, x) += t * opts_.background.x;
            image_.at(1, y, x) += t * opts_.background.y;
            image_.at(2, y, x) += t * opts_.background.z;
        }
}

SceneGrads RenderGraph::backward(const RenderBuffer& d_pixels) const {
    SceneGrads grads(scene_.gaussians.size());
    if (d_pixels.width != camera_.width || d_pixels.height != camera_.height)
        throw RenderError("backward: gradient image size mismatch");

    // Per-splat accumulators for the pixel-dependent terms.
    std::vector<double> d_u(splats_.size(), 0.0), d_v(splats_.size(), 0.0);
    std::vector<double> d_ia(splats_.size(), 0.0), d_ib(splats_.size(), 0.0),
        d_ic(splats_.size(), 0.0);
    std::vector<double> d_op(splats_.size(), 0.0);
    std::vector<Vec3> d_col(splats_.size());

    for (int y = 0; y < camera_.height; ++y) {
        for (int x = 0; x < camera_.width; ++x) {
            std::size_t px = static_cast<std::size_t>(y) * camera_.width + x;
            const auto& contribs = pixels_[px];
            if (contribs.empty()) continue;
            Vec3 g{d_pixels.at(0, y, x), d_pixels.at(1, y, x), d_pixels.at(2, y, x)};

            // Suffix S = sum_{k>i} T_k a_k c_k + T_end * background.
            double t_end = contribs.back().transmittance * (1.0 - contribs.back().alpha);
            Vec3 suffix = opts_.background * t_end;
            for (std::size_t ci = contribs.size(); ci-- > 0;) {
                const Contribution& cb = contribs[ci];
                const RenderGraph::Splat& s = splats_[cb.splat];
                double t_i = cb.transmittance;
                double a_i = cb.alpha;
                Vec3 term = s.color * (t_i * a_i);

                d_col[cb.splat] += g * (t_i * a_i);
                double d_alpha = dot(g, s.color * t_i - suffix / (1.0 - a_i));
                suffix += term;

                if (a_i >= opts_.alpha_max) continue;  // capped: flat in o and sigma
                double opacity = scene_.gaussians[s.index].opacity;
                double gexp = a_i / opacity;  // exp(-sigma)
                d_op[cb.splat] += d_alpha * gexp;
                double d_sigma = -opacity * gexp * d_alpha;
                double dx = (x + 0.5) - s.u;
                double dy = (y + 0.5) - s.v;
                double d_dx = (s.inv_a * dx + s.inv_b * dy) * d_sigma;
                double d_dy = (s.inv_b * dx + s.inv_c * dy) * d_sigma;
                d_u[cb.splat] -= d_dx;
                d_v[cb.splat] -= d_dy;
                d_ia[cb.splat] += 0.5 * dx * dx * d_sigma;
                d_ib[cb.splat] += dx * dy * d_sigma;
                d_ic[cb.splat] += 0.5 * dy * dy * d_sigma;
            }
        }
    }

    // Distribute per-splat accumulators to gaussian parameters.
    for (std::size_t si = 0; si < splats_.size(); ++si) {
        const RenderGraph::Splat& s = splats_[si];
        const Gaussian& gau = scene_.gaussians[s.index];
        std::size_t gi = s.index;

        grads.d_opacity[gi] += d_op[si];

        // Color chain: clamp, SH basis, view direction.
        Vec3 dc = d_col[si];
        Vec3 dc_pre{s.pre_color.x > 0.0 ? dc.x : 0.0, s.pre_color.y > 0.0 ? dc.y : 0.0,
                    s.pre_color.z > 0.0 ? dc.z : 0.0};
        double basis[kShCoeffCount];
        Vec3 basis_grad[kShCoeffCount];
        sh_basis(s.dir, gau.bandwidth, basis);
        sh_basis_grad(s.dir, gau.bandwidth, basis_grad);
        Vec3 d_dir{};
        for (int j = 0; j < sh_coeffs_for_bandwidth(gau.bandwidth); ++j) {
            grads.d_sh[gi][static_cast<std::size_t>(j)] += dc_pre * basis[j];
            double coeff_dot = dot(gau.sh[static_cast<std::size_t>(j)], dc_pre);
            d_dir += basis_grad[j] * coeff_dot;
        }
        // dir = (p - cam) / |p - cam|
        Vec3 d_to = (d_dir - s.dir * dot(s.dir, d_dir)) / s.dir_len;
        grads.d_position[gi] += d_to;

        if (d_u[si] == 0.0 && d_v[si] == 0.0 && d_ia[si] == 0.0 && d_ib[si] == 0.0 &&
            d_ic[si] == 0.0)
            continue;

        // Recompute the projection intermediates.
        Mat3 r_q = quat_to_mat(gau.rotation);
        Mat3 a_mat = r_q * Mat3::diagonal(gau.scale);
        Mat3 cov_w = a_mat * a_mat.transposed();
        Mat3 m = camera_.rotation * cov_w * camera_.rotation.transposed();
        double z = s.x_cam.z;
        double j00 = camera_.fx / z;
        double j02 = -camera_.fx * s.x_cam.x / (z * z);
        double j11 = camera_.fy / z;
        double j12 = -camera_.fy * s.x_cam.y / (z * z);

        // Precision-matrix backward: Lambda = Sigma^-1 (2x2).
        double la = s.inv_a, lb = s.inv_b, lc = s.inv_c;
        double dl00 = d_ia[si], dl01 = 0.5 * d_ib[si], dl11 = d_ic[si];
        // dSigma = -Lambda dLambda Lambda
        double t00 = la * dl00 + lb * dl01, t01 = la * dl01 + lb * dl11;
        double t10 = lb * dl00 + lc * dl01, t11 = lb * dl01 + lc * dl11;
        double ds00 = -(t00 * la + t01 * lb);
        double ds01 = -(t00 * lb + t01 * lc);
        double ds10 = -(t10 * la + t11 * lb);
        double ds11 = -(t10 * lb + t11 * lc);
        double d_a = ds00, d_b = ds01 + ds10, d_c = ds11;  // symmetric params

        // Sigma2D entries in terms of J rows and M.
        // a = q0.M.q0, b = q0.M.q1, c = q1.M.q1 with q0 = (j00, 0, j02), q1 = (0, j11, j12).
        Vec3 q0{j00, 0.0, j02}, q1{0.0, j11, j12};
        Vec3 mq0 = m * q0, mq1 = m * q1;
        // dM (full) = d_a q0 q0^T + d_b/2 (q0 q1^T + q1 q0^T)... using symmetric carriers:
        Mat3 dm;
        for (int r = 0; r < 3; ++r)
            for (int col = 0; col < 3; ++col)
                dm(r, col) = d_a * q0[r] * q0[col] + d_c * q1[r] * q1[col] +
                             0.5 * d_b * (q0[r] * q1[col] + q1[r] * q0[col]);
        // dJ entries: d a/d q0 = 2 M q0, d b/d q0 = M q1, etc.
        Vec3 d_q0 = mq0 * (2.0 * d_a) + mq1 * d_b;
        Vec3 d_q1 = mq1 * (2.0 * d_c) + mq0 * d_b;
        double d_j00 = d_q0.x, d_j02 = d_q0.z, d_j11 = d_q1.y, d_j12 = d_q1.z;

        // Camera-space covariance to world covariance.
        Mat3 d_cov_w = camera_.rotation.transposed() * dm * camera_.rotation;
        // cov_w = A A^T
        Mat3 d_A = (d_cov_w + d_cov_w.transposed()) * a_mat;
        // A = R diag(s)
        Mat3 d_R;
        Vec3 d_scale{};
        for (int r = 0; r < 3; ++r)
            for (int col = 0; col < 3; ++col) {
                d_R(r, col) = d_A(r, col) * gau.scale[col];
                d_scale[col] += r_q(r, col) * d_A(r, col);
            }
        grads.d_scale[gi] += d_scale;

        // Rotation matrix to quaternion.
        double w = gau.rotation.w, qx = gau.rotation.x, qy = gau.rotation.y, qz = gau.rotation.z;
        Mat3 dRdw{{0, -2 * qz, 2 * qy, 2 * qz, 0, -2 * qx, -2 * qy, 2 * qx, 0}};
        Mat3 dRdx{{0, 2 * qy, 2 * qz, 2 * qy, -4 * qx, -2 * w, 2 * qz, 2 * w, -4 * qx}};
        Mat3 dRdy{{-4 * qy, 2 * qx, 2 * w, 2 * qx, 0, 2 * qz, -2 * w, 2 * qz, -4 * qy}};
        Mat3 dRdz{{-4 * qz, -2 * w, 2 * qx, 2 * w, -4 * qz, 2 * qy, 2 * qx, 2 * qy, 0}};
        const Mat3* dRdq[4] = {&dRdw, &dRdx, &dRdy, &dRdz};
        for (int cq = 0; cq < 4; ++cq) {
            double acc = 0.0;
            for (int e = 0; e < 9; ++e) acc += d_R.m[static_cast<std::size_t>(e)] * dRdq[cq]->m[static_cast<std::size_t>(e)];
            grads.d_rotation[gi][cq] += acc;
        }

        // Mean and Jacobian entries back to the camera-space point.
        Vec3 d_xcam{};
        d_xcam.x += d_u[si] * camera_.fx / z;
        d_xcam.y += d_v[si] * camera_.fy / z;
        d_xcam.z += -d_u[si] * camera_.fx * s.x_cam.x / (z * z) -
                    d_v[si] * camera_.fy * s.x_cam.y / (z * z);
        d_xcam.x += d_j02 * (-camera_.fx / (z * z));
        d_xcam.y += d_j12 * (-camera_.fy / (z * z));
        d_xcam.z += d_j00 * (-camera_.fx / (z * z)) + d_j02 * (2.0 * camera_.fx * s.x_cam.x / (z * z * z)) +
                    d_j11 * (-camera_.fy / (z * z)) + d_j12 * (2.0 * camera_.fy * s.x_cam.y / (z * z * z));
        grads.d_position[gi] += camera_.rotation.transposed() * d_xcam;
    }
    return grads;
}

// ---- metrics ----

double psnr(const RenderBuffer& a, const RenderBuffer& b) {
    if (a.width != b.width || a.height != b.height) throw RenderError("psnr: dimension mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.planes.size(); ++i) {
        double d = a.planes[i] - b.planes[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.planes.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double psnr(const Image& a, const Image& b) {
    return psnr(RenderBuffer::from_image(a), RenderBuffer::from_image(b));
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

std::array<double, kSsimWindow> ssim_kernel() {
    std::array<double, kSsimWindow> k{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        double d = i - (kSsimWindow - 1) / 2.0;
        k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += k[static_cast<std::size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Separable zero-padded convolution of one plane with the symmetric kernel;
// also its own transpose.
void conv_plane(const double* src, double* dst, int w, int h) {
    static const std::array<double, kSsimWindow> kernel = ssim_kernel();
    const int r = kSsimWindow / 2;
    std::vector<double> tmp(static_cast<std::size_t>(w) * h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = -r; k <= r; ++k) {
                int xx = x + k;
                if (xx < 0 || xx >= w) continue;
                s += kernel[static_cast<std::size_t>(k + r)] * src[static_cast<std::size_t>(y) * w + xx];
            }
            tmp[static_cast<std::size_t>(y) * w + x] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = -r; k <= r; ++k) {
                int yy = y + k;
                if (yy < 0 || yy >= h) continue;
                s += kernel[static_cast<std::size_t>(k + r)] * tmp[static_cast<std::size_t>(yy) * w + x];
            }
            dst[static_cast<std::size_t>(y) * w + x] = s;
        }
}

}  // namespace

double ssim_with_grad(const RenderBuffer& a, const RenderBuffer& b, RenderBuffer& d_a) {
    if (a.width != b.width || a.height != b.height) throw RenderError("ssim: dimension mismatch");
    const int w = a.width, h = a.height;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    bool want_grad = d_a.width == w && d_a.height == h;

    double total = 0.0;
    std::vector<double> mu_x(n), mu_y(n), xx(n), yy(n), xy(n), sxx(n), syy(n), sxy(n);
    std::vector<double> g_mu_x(n), g_sxx(n), g_sxy(n), conv_buf(n);
    for (int c = 0; c < 3; ++c) {
        const double* x = a.planes.data() + static_cast<std::size_t>(c) * n;
        const double* y = b.planes.data() + static_cast<std::size_t>(c) * n;
        conv_plane(x, mu_x.data(), w, h);
        conv_plane(y, mu_y.data(), w, h);
        for (std::size_t i = 0; i < n; ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        conv_plane(xx.data(), sxx.data(), w, h);
        conv_plane(yy.data(), syy.data(), w, h);
        conv_plane(xy.data(), sxy.data(), w, h);

        std::fill(g_mu_x.begin(), g_mu_x.end(), 0.0);
        std::fill(g_sxx.begin(), g_sxx.end(), 0.0);
        std::fill(g_sxy.begin(), g_sxy.end(), 0.0);
        const double gS = 1.0 / (3.0 * static_cast<double>(n));  // d mean / d S_p
        for (std::size_t i = 0; i < n; ++i) {
            double mx = mu_x[i], my = mu_y[i];
            double vx = sxx[i] - mx * mx;
            double vy = syy[i] - my * my;
            double vxy = sxy[i] - mx * my;
            double a1 = 2.0 * mx * my + kSsimC1;
            double a2 = 2.0 * vxy + kSsimC2;
            double b1 = mx * mx + my * my + kSsimC1;
            double b2 = vx + vy + kSsimC2;
            double s = (a1 * a2) / (b1 * b2);
            total += s;
            if (!want_grad) continue;
            double g_a1 = gS * a2 / (b1 * b2);
            double g_a2 = gS * a1 / (b1 * b2);
            double g_b1 = -gS * s / b1;
            double g_b2 = -gS * s / b2;
            double g_vx = g_b2;
            double g_vxy = 2.0 * g_a2;
            // mu_x enters a1, b1 directly and vx, vxy through the centering.
            g_mu_x[i] = 2.0 * my * g_a1 + 2.0 * mx * g_b1 - 2.0 * mx * g_vx - my * g_vxy;
            g_sxx[i] = g_vx;
            g_sxy[i] = g_vxy;
        }
        if (want_grad) {
            double* gx = d_a.planes.data() + static_cast<std::size_t>(c) * n;
            conv_plane(g_mu_x.data(), conv_buf.data(), w, h);
            for (std::size_t i = 0; i < n; ++i) gx[i] += conv_buf[i];
            conv_plane(g_sxx.data(), conv_buf.data(), w, h);
            for (std::size_t i = 0; i < n; ++i) gx[i] += 2.0 * x[i] * conv_buf[i];
            conv_plane(g_sxy.data(), conv_buf.data(), w, h);
            for (std::size_t i = 0; i < n; ++i) gx[i] += y[i] * conv_buf[i];
        }
    }
    return total / (3.0 * static_cast<double>(n));
}

double ssim(const RenderBuffer& a, const RenderBuffer& b) {
    RenderBuffer no_grad;
    return ssim_with_grad(a, b, no_grad);
}

double ssim(const Image& a, const Image& b) {
    return ssim(RenderBuffer::from_image(a), RenderBuffer::from_image(b));
}

}  // namespace locogs
