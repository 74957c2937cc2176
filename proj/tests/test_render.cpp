#include <doctest.h>

#include <cmath>

#include "locogs/render.hpp"
#include "locogs/rng.hpp"
#include "support/synthetic.hpp"

using namespace locogs;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Independent real SH basis built from the closed-form normalization
// constants (with the sign conventions used by splat renderers).
double oracle_basis(int index, const Vec3& d) {
    double x = d.x, y = d.y, z = d.z;
    switch (index) {
        case 0: return 0.5 * std::sqrt(1.0 / kPi);
        case 1: return -std::sqrt(3.0 / (4.0 * kPi)) * y;
        case 2: return std::sqrt(3.0 / (4.0 * kPi)) * z;
        case 3: return -std::sqrt(3.0 / (4.0 * kPi)) * x;
        case 4: return 0.5 * std::sqrt(15.0 / kPi) * x * y;
        case 5: return -0.5 * std::sqrt(15.0 / kPi) * y * z;
        case 6: return 0.25 * std::sqrt(5.0 / kPi) * (2 * z * z - x * x - y * y);
        case 7: return -0.5 * std::sqrt(15.0 / kPi) * x * z;
        case 8: return 0.25 * std::sqrt(15.0 / kPi) * (x * x - y * y);
        case 9: return -0.25 * std::sqrt(35.0 / (2 * kPi)) * y * (3 * x * x - y * y);
        case 10: return 0.5 * std::sqrt(105.0 / kPi) * x * y * z;
        case 11: return -0.25 * std::sqrt(21.0 / (2 * kPi)) * y * (4 * z * z - x * x - y * y);
        case 12: return 0.25 * std::sqrt(7.0 / kPi) * z * (2 * z * z - 3 * x * x - 3 * y * y);
        case 13: return -0.25 * std::sqrt(21.0 / (2 * kPi)) * x * (4 * z * z - x * x - y * y);
        case 14: return 0.25 * std::sqrt(105.0 / kPi) * z * (x * x - y * y);
        case 15: return -0.25 * std::sqrt(35.0 / (2 * kPi)) * x * (x * x - 3 * y * y);
        default: return 0.0;
    }
}

Vec3 oracle_sh_color(const std::array<Vec3, kShCoeffCount>& sh, int b, const Vec3& d) {
    Vec3 c{0.5, 0.5, 0.5};
    for (int j = 0; j < sh_coeffs_for_bandwidth(b); ++j) c += sh[static_cast<std::size_t>(j)] * oracle_basis(j, d);
    return {std::fmax(0.0, c.x), std::fmax(0.0, c.y), std::fmax(0.0, c.z)};
}

Camera test_camera(int size = 32) {
    return Camera::look_at({0, 0, -4}, {0, 0, 0}, {0, 1, 0}, 45.0, size, size);
}

// Base color such that sh_color() is exactly `value` regardless of direction.
Vec3 flat_color(double value) {
    double k = (value - 0.5) / 0.28209479177387814;
    return {k, k, k};
}

}  // namespace

TEST_CASE("bandwidth-0 color ignores the view direction") {
    Rng rng(1);
    Gaussian g = test::random_gaussian(rng, 0);
    Vec3 c1 = sh_color(g.sh, 0, {0, 0, 1});
    Vec3 c2 = sh_color(g.sh, 0, normalized(Vec3{1, 2, -1}));
    CHECK(c1 == c2);
}

TEST_CASE("degree-1 color is affine in the direction components") {
    Rng rng(2);
    Gaussian g = test::random_gaussian(rng, 1);
    // Affine: c(d) + c(-d) = 2 c(0-effect) for the linear part (pre-clamp).
    for (auto& v : g.sh) v = {0.2 + 0.01 * v.x, 0.2 + 0.01 * v.y, 0.2 + 0.01 * v.z};  // keep positive
    Vec3 d = normalized(Vec3{0.3, -0.5, 0.8});
    Vec3 a = sh_color(g.sh, 1, d);
    Vec3 b = sh_color(g.sh, 1, d * -1.0);
    Vec3 base = g.sh[0] * 0.28209479177387814 + Vec3{0.5, 0.5, 0.5};
    for (int ch = 0; ch < 3; ++ch) CHECK(a[ch] + b[ch] == doctest::Approx(2 * base[ch]).epsilon(1e-12));
}

TEST_CASE("sh colors match the symbolic basis oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        Gaussian g = test::random_gaussian(rng, 3);
        Vec3 d = normalized(Vec3{rng.normal(), rng.normal(), rng.normal()});
        Vec3 mine = sh_color(g.sh, 3, d);
        Vec3 oracle = oracle_sh_color(g.sh, 3, d);
        for (int ch = 0; ch < 3; ++ch) CHECK(mine[ch] == doctest::Approx(oracle[ch]).epsilon(1e-9));
    }
}

TEST_CASE("gaussian alpha at the center equals the opacity") {
    Rng rng(4);
    Gaussian g = test::random_gaussian(rng);
    CHECK(gaussian_alpha(g, g.position) == doctest::Approx(g.opacity).epsilon(1e-13));
}

TEST_CASE("gaussian alpha one mahalanobis unit away is o*exp(-1/2)") {
    Gaussian g = test::default_gaussian();
    g.opacity = 0.8;
    g.scale = {2.0, 1.0, 1.0};
    // Along x the mahalanobis unit is one scale length.
    CHECK(gaussian_alpha(g, {2.0, 0, 0}) == doctest::Approx(0.8 * std::exp(-0.5)).epsilon(1e-12));
}

TEST_CASE("gaussian alpha matches a direct solve oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        Gaussian g = test::random_gaussian(rng);
        Vec3 x = g.position + Vec3{rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
        // Oracle: solve in the gaussian's eigenbasis.
        Mat3 r = quat_to_mat(g.rotation);
        Vec3 local = r.transposed() * (x - g.position);
        double m = 0.0;
        for (int a = 0; a < 3; ++a) m += local[a] * local[a] / (g.scale[a] * g.scale[a]);
        double expected = g.opacity * std::exp(-0.5 * m);
        CHECK(gaussian_alpha(g, x) == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("empty scene renders the background everywhere") {
    SplatScene scene;
    RenderOptions opts;
    opts.background = {0.1, 0.2, 0.3};
    RenderBuffer img = render(scene, test_camera(), opts);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            CHECK(img.at(0, y, x) == 0.1);
            CHECK(img.at(1, y, x) == 0.2);
            CHECK(img.at(2, y, x) == 0.3);
        }
}

TEST_CASE("single centered gaussian composites as one term") {
    SplatScene scene;
    Gaussian g = test::default_gaussian();
    g.opacity = 0.7;
    g.scale = {0.5, 0.5, 0.5};
    g.sh[0] = flat_color(0.9);
    scene.gaussians.push_back(g);
    scene.recompute_bounds();
    Camera cam = test_camera(33);  // odd size: a pixel center hits the optical axis

    RenderBuffer img = render(scene, cam);
    // Center pixel: alpha = o (gaussian peak), color = 0.9 * o.
    int c = 16;
    CHECK(img.at(0, c, c) == doctest::Approx(0.7 * 0.9).epsilon(1e-3));
    // Transmittance behind it: render on white background, T = 1 - alpha.
    RenderOptions white;
    white.background = {1, 1, 1};
    RenderBuffer img_w = render(scene, cam, white);
    double t_center = img_w.at(0, c, c) - img.at(0, c, c);
    CHECK(t_center == doctest::Approx(1.0 - 0.7).epsilon(1e-3));
}

TEST_CASE("two overlapping gaussians match the hand-computed compositing sum") {
    SplatScene scene;
    Gaussian front = test::default_gaussian();
    front.position = {0, 0, -1};
    front.opacity = 0.6;
    front.scale = {0.4, 0.4, 0.4};
    front.sh[0] = flat_color(0.8);
    Gaussian back = front;
    back.position = {0, 0, 1};
    back.opacity = 0.5;
    back.sh[0] = flat_color(0.3);
    scene.gaussians = {front, back};
    scene.recompute_bounds();
    Camera cam = test_camera(33);

    RenderBuffer img = render(scene, cam);
    int c = 16;
    // Pixel on both centers: C = a1*c1 + (1-a1)*a2*c2 with peak alphas.
    double expected = 0.6 * 0.8 + (1 - 0.6) * 0.5 * 0.3;
    CHECK(img.at(0, c, c) == doctest::Approx(expected).epsilon(5e-3));
}

TEST_CASE("compositing conserves transmittance: unit colors fill to one") {
    SplatScene scene = test::random_scene(30, 6);
    for (auto& g : scene.gaussians) {
        g.bandwidth = 0;
        for (auto& s : g.sh) s = Vec3{};
        g.sh[0] = flat_color(1.0);
        g.scale = {0.3, 0.3, 0.3};
    }
    RenderOptions opts;
    opts.background = {1, 1, 1};
    RenderBuffer img = render(scene, test_camera(48), opts);
    for (double v : img.planes) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("scene order does not change the image") {
    SplatScene scene = test::random_scene(40, 7);
    Camera cam = test_camera(32);
    RenderBuffer a = render(scene, cam);
    std::reverse(scene.gaussians.begin(), scene.gaussians.end());
    RenderBuffer b = render(scene, cam);
    CHECK(a.planes == b.planes);
}

TEST_CASE("psnr of identical images is the infinity sentinel") {
    RenderBuffer a(8, 8);
    for (auto& v : a.planes) v = 0.25;
    CHECK(std::isinf(psnr(a, a)));
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("uniform 0.1 offset gives 20 dB") {
    RenderBuffer a(16, 16), b(16, 16);
    for (auto& v : a.planes) v = 0.5;
    for (auto& v : b.planes) v = 0.6;
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));
}

TEST_CASE("psnr and ssim match independent implementations on random images") {
    Rng rng(8);
    RenderBuffer a(24, 24), b(24, 24);
    for (auto& v : a.planes) v = rng.uniform();
    for (auto& v : b.planes) v = rng.uniform();

    // Independent PSNR.
    double mse = 0.0;
    for (std::size_t i = 0; i < a.planes.size(); ++i)
        mse += (a.planes[i] - b.planes[i]) * (a.planes[i] - b.planes[i]);
    mse /= static_cast<double>(a.planes.size());
    CHECK(psnr(a, b) == doctest::Approx(10 * std::log10(1 / mse)).epsilon(1e-12));

    // Independent SSIM: direct non-separable window sums.
    auto gauss = [](int dx, int dy) {
        return std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
    };
    double wsum = 0.0;
    for (int dy = -5; dy <= 5; ++dy)
        for (int dx = -5; dx <= 5; ++dx) wsum += gauss(dx, dy);
    double total = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int dy = -5; dy <= 5; ++dy)
                    for (int dx = -5; dx <= 5; ++dx) {
                        int xx = x + dx, yy = y + dy;
                        double w = gauss(dx, dy) / wsum;
                        double va = (xx >= 0 && xx < 24 && yy >= 0 && yy < 24) ? a.at(c, yy, xx) : 0.0;
                        double vb = (xx >= 0 && xx < 24 && yy >= 0 && yy < 24) ? b.at(c, yy, xx) : 0.0;
                        mx += w * va;
                        my += w * vb;
                        sxx += w * va * va;
                        syy += w * vb * vb;
                        sxy += w * va * vb;
                    }
                double vx = sxx - mx * mx, vy = syy - my * my, vxy = sxy - mx * my;
                double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
                total += (2 * mx * my + c1) * (2 * vxy + c2) /
                         ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
    CHECK(ssim(a, b) == doctest::Approx(total / (3 * 24 * 24)).epsilon(1e-10));
}

TEST_CASE("ssim gradient matches finite differences") {
    Rng rng(9);
    RenderBuffer a(12, 12), b(12, 12);
    for (auto& v : a.planes) v = rng.uniform(0.2, 0.8);
    for (auto& v : b.planes) v = rng.uniform(0.2, 0.8);
    RenderBuffer grad(12, 12);
    ssim_with_grad(a, b, grad);
    const double h = 1e-5;
    for (int trial = 0; trial < 40; ++trial) {
        std::size_t i = rng.below(a.planes.size());
        RenderBuffer ap = a, am = a;
        ap.planes[i] += h;
        am.planes[i] -= h;
        double fd = (ssim(ap, b) - ssim(am, b)) / (2 * h);
        CHECK(grad.planes[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("render graph forward equals the plain renderer") {
    SplatScene scene = test::random_scene(25, 10);
    Camera cam = test_camera(24);
    RenderGraph graph(scene, cam);
    RenderBuffer plain = render(scene, cam);
    CHECK(graph.image().planes == plain.planes);
}

TEST_CASE("render gradients match finite differences on a two-gaussian scene") {
    SplatScene scene;
    Gaussian a = test::default_gaussian();
    a.position = {0.15, 0.1, -0.5};
    a.opacity = 0.55;
    a.scale = {0.9, 0.7, 0.8};
    a.rotation = normalized(Quat{0.9, 0.2, -0.1, 0.3});
    a.bandwidth = 2;
    a.sh[0] = {0.4, 0.3, 0.5};
    for (int c = 1; c < 9; ++c) a.sh[c] = {0.02 * c, -0.015 * c, 0.01 * c};
    Gaussian b = a;
    b.position = {-0.2, -0.15, 0.6};
    b.opacity = 0.4;
    b.scale = {0.8, 1.0, 0.6};
    b.rotation = normalized(Quat{0.8, -0.3, 0.2, 0.1});
    scene.gaussians = {a, b};
    scene.recompute_bounds();

    Camera cam = test_camera(8);
    RenderGraph graph(scene, cam);

    // Loss: weighted sum of pixels with fixed coefficients.
    Rng rng(11);
    RenderBuffer weights(8, 8);
    for (auto& w : weights.planes) w = rng.uniform(-1, 1);
    auto loss_of = [&](const SplatScene& s) {
        RenderBuffer img = render(s, cam);
        double loss = 0.0;
        for (std::size_t i = 0; i < img.planes.size(); ++i) loss += weights.planes[i] * img.planes[i];
        return loss;
    };

    SceneGrads grads = graph.backward(weights);
    const double h = 1e-5;
    auto fd_check = [&](double analytic, auto mutate) {
        SplatScene up = scene, down = scene;
        mutate(up, h);
        mutate(down, -h);
        double fd = (loss_of(up) - loss_of(down)) / (2 * h);
        double denom = std::fmax(1e-7, std::fabs(fd));
        CHECK(std::fabs(analytic - fd) / denom <= 1e-5);
    };

    for (std::size_t gi = 0; gi < 2; ++gi) {
        for (int axis = 0; axis < 3; ++axis) {
            fd_check(grads.d_position[gi][axis],
                     [gi, axis](SplatScene& s, double d) { s.gaussians[gi].position[axis] += d; });
            fd_check(grads.d_scale[gi][axis],
                     [gi, axis](SplatScene& s, double d) { s.gaussians[gi].scale[axis] += d; });
        }
        fd_check(grads.d_opacity[gi],
                 [gi](SplatScene& s, double d) { s.gaussians[gi].opacity += d; });
        for (int c = 0; c < 4; ++c)
            fd_check(grads.d_rotation[gi][c],
                     [gi, c](SplatScene& s, double d) { s.gaussians[gi].rotation[c] += d; });
        for (int j = 0; j < 9; ++j)
            for (int ch = 0; ch < 3; ++ch)
                fd_check(grads.d_sh[gi][static_cast<std::size_t>(j)][ch],
                         [gi, j, ch](SplatScene& s, double d) { s.gaussians[gi].sh[static_cast<std::size_t>(j)][ch] += d; });
    }
}

TEST_CASE("degenerate camera raises") {
    SplatScene scene;
    Camera cam;
    cam.width = 0;
    CHECK_THROWS_AS(render(scene, cam), RenderError);
}

TEST_CASE("rendering is identical at any thread count") {
    SplatScene scene = test::random_scene(60, 12);
    Camera cam = test_camera(40);
    RenderOptions one, four;
    four.threads = 4;
    RenderBuffer a = render(scene, cam, one);
    RenderBuffer b = render(scene, cam, four);
    CHECK(a.planes == b.planes);
}

TEST_CASE("capped-alpha contributions keep gradients finite and flat") {
    SplatScene scene;
    Gaussian g = test::default_gaussian();
    g.opacity = 0.9999;  // above the 0.999 compositing cap at the peak
    g.scale = {0.8, 0.8, 0.8};
    g.sh[0] = flat_color(0.7);
    scene.gaussians.push_back(g);
    scene.recompute_bounds();
    Camera cam = test_camera(9);
    RenderGraph graph(scene, cam);
    RenderBuffer weights(9, 9);
    for (auto& w : weights.planes) w = 1.0;
    SceneGrads grads = graph.backward(weights);
    CHECK(std::isfinite(grads.d_opacity[0]));
    CHECK(std::isfinite(grads.d_position[0].x));
    CHECK(std::isfinite(grads.d_scale[0].x));
    // The peak pixel is capped, so opacity influence comes only from the
    // uncapped rim; it must be much smaller than an uncapped splat's.
    SplatScene low = scene;
    low.gaussians[0].opacity = 0.5;
    RenderGraph graph_low(low, cam);
    SceneGrads grads_low = graph_low.backward(weights);
    CHECK(std::fabs(grads.d_opacity[0]) < std::fabs(grads_low.d_opacity[0]));
}
