#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "locogs/masks.hpp"
#include "locogs/rng.hpp"
#include "support/synthetic.hpp"

using namespace locogs;

TEST_CASE("a passing mask leaves the gaussian unchanged") {
    SplatScene scene;
    scene.gaussians.push_back(test::default_gaussian());
    MaskState state = MaskState::make(1, 0.9);
    SplatScene masked = apply_masks(scene, state);
    CHECK(masked.gaussians[0].opacity == scene.gaussians[0].opacity);
    CHECK(masked.gaussians[0].scale == scene.gaussians[0].scale);
}

TEST_CASE("a failed SH degree kills all higher degrees") {
    SplatScene scene;
    Rng rng(1);
    scene.gaussians.push_back(test::random_gaussian(rng, 3));
    MaskState state = MaskState::make(1, 0.9);
    double pass = inv_sigmoid(0.9), fail = inv_sigmoid(0.001);
    state.eta[0] = {pass, fail, pass};  // degree 2 fails, degree 3 nominally passes
    CHECK(state.sh_mask(0, 1) == 1);
    CHECK(state.sh_mask(0, 2) == 0);
    CHECK(state.sh_mask(0, 3) == 0);  // cumulative product

    SplatScene masked = apply_masks(scene, state);
    for (int c = 1; c < 4; ++c)
        CHECK(!(masked.gaussians[0].sh[c] == Vec3{}));
    for (int c = 4; c < 16; ++c) CHECK(masked.gaussians[0].sh[c] == Vec3{});
}

TEST_CASE("monotone SH masks: m^l >= m^{l+1}") {
    Rng rng(2);
    MaskState state = MaskState::make(50, 0.5);
    for (auto& e : state.eta)
        e = {rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(-6, 6)};
    for (std::size_t i = 0; i < state.size(); ++i)
        for (int l = 1; l < kMaxShDegree; ++l)
            CHECK(state.sh_mask(i, l) >= state.sh_mask(i, l + 1));
}

TEST_CASE("deeply negative mu blanks every gaussian") {
    SplatScene scene = test::random_scene(10, 3);
    MaskState state = MaskState::make(10, 0.9);
    for (auto& m : state.mu) m = -40.0;
    SplatScene masked = apply_masks(scene, state);
    for (const auto& g : masked.gaussians) {
        CHECK(g.opacity == 0.0);
        CHECK(g.scale == Vec3{0, 0, 0});
    }
}

TEST_CASE("ties at the threshold count as passing") {
    MaskState state = MaskState::make(1);
    state.mu[0] = inv_sigmoid(state.tau);
    CHECK(state.pass(0));
}

TEST_CASE("mask loss is the mean sigmoid") {
    MaskState state = MaskState::make(4);
    for (auto& m : state.mu) m = 0.0;
    CHECK(mask_loss(state) == doctest::Approx(0.5).epsilon(1e-15));

    MaskState one = MaskState::make(1);
    one.mu[0] = 60.0;
    CHECK(mask_loss(one) == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(4);
    MaskState rand = MaskState::make(100);
    double expected = 0.0;
    for (auto& m : rand.mu) {
        m = rng.uniform(-5, 5);
        expected += 1.0 / (1.0 + std::exp(-m));
    }
    CHECK(mask_loss(rand) == doctest::Approx(expected / 100.0).epsilon(1e-12));
}

TEST_CASE("sh mask loss weights are (3,5,7)/15 and sum to one") {
    CHECK(sh_mask_weight(1) == doctest::Approx(3.0 / 15.0));
    CHECK(sh_mask_weight(2) == doctest::Approx(5.0 / 15.0));
    CHECK(sh_mask_weight(3) == doctest::Approx(7.0 / 15.0));
    CHECK(sh_mask_weight(1) + sh_mask_weight(2) + sh_mask_weight(3) == doctest::Approx(1.0));
}

TEST_CASE("sh mask loss at eta=0 is one half") {
    MaskState state = MaskState::make(3);
    for (auto& e : state.eta) e = {0.0, 0.0, 0.0};
    CHECK(sh_mask_loss(state) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("sh mask loss matches a manual two-gaussian computation") {
    MaskState state = MaskState::make(2);
    state.eta[0] = {1.0, -1.0, 2.0};
    state.eta[1] = {0.5, 0.0, -2.0};
    double expected = 0.0;
    expected += 3.0 / 15 * sigmoid(1.0) + 5.0 / 15 * sigmoid(-1.0) + 7.0 / 15 * sigmoid(2.0);
    expected += 3.0 / 15 * sigmoid(0.5) + 5.0 / 15 * sigmoid(0.0) + 7.0 / 15 * sigmoid(-2.0);
    CHECK(sh_mask_loss(state) == doctest::Approx(expected / 2.0).epsilon(1e-12));
}

TEST_CASE("bandwidth derivation follows the mask pattern") {
    MaskState state = MaskState::make(1);
    double pass = inv_sigmoid(0.9), fail = inv_sigmoid(0.001);

    state.eta[0] = {fail, pass, pass};
    CHECK(derive_bandwidth(state)[0] == 0);  // m1 = 0 forces b = 0
    state.eta[0] = {pass, pass, fail};
    CHECK(derive_bandwidth(state)[0] == 2);
    state.eta[0] = {pass, pass, pass};
    CHECK(derive_bandwidth(state)[0] == 3);
}

TEST_CASE("bandwidth derivation matches brute-force enumeration of all patterns") {
    double pass = inv_sigmoid(0.9), fail = inv_sigmoid(0.001);
    for (int pattern = 0; pattern < 8; ++pattern) {
        MaskState state = MaskState::make(1);
        bool p1 = pattern & 1, p2 = pattern & 2, p3 = pattern & 4;
        state.eta[0] = {p1 ? pass : fail, p2 ? pass : fail, p3 ? pass : fail};
        // Brute force: cumulative masks, then max passing degree.
        int m1 = p1 ? 1 : 0;
        int m2 = m1 && p2 ? 1 : 0;
        int m3 = m2 && p3 ? 1 : 0;
        int expected = m1 == 0 ? 0 : (m3 ? 3 : (m2 ? 2 : 1));
        CHECK(derive_bandwidth(state)[0] == expected);
    }
}

TEST_CASE("prune keeps survivors in stable order with a consistent remap") {
    SplatScene scene = test::random_scene(10, 7);
    MaskState state = MaskState::make(10, 0.9);
    for (std::size_t i = 0; i < 10; i += 2) state.mu[i] = -10.0;  // fail even indices
    auto result = prune(scene, state);
    REQUIRE(result.scene.size() == 5);
    REQUIRE(result.survivors == std::vector<std::size_t>{1, 3, 5, 7, 9});
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(result.scene.gaussians[i].position == scene.gaussians[result.survivors[i]].position);
        CHECK(result.state.mu[i] == state.mu[result.survivors[i]]);
    }
}

TEST_CASE("prune with no failures is the identity remap") {
    SplatScene scene = test::random_scene(6, 8);
    MaskState state = MaskState::make(6, 0.9);
    auto result = prune(scene, state);
    CHECK(result.scene.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(result.survivors[i] == i);
}

TEST_CASE("prune agrees with a brute-force filter") {
    Rng rng(9);
    SplatScene scene = test::random_scene(200, 10);
    MaskState state = MaskState::make(200);
    for (auto& m : state.mu) m = rng.uniform(-8, 8);
    auto result = prune(scene, state);
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < 200; ++i)
        if (sigmoid(state.mu[i]) >= state.tau) expected.push_back(i);
    CHECK(result.survivors == expected);
}

TEST_CASE("STE gradient of the mask losses matches the hand derivative") {
    // For one gaussian, d(mask_loss)/dmu = sigma'(mu); the STE treats the
    // indicator as identity so no extra factor appears.
    MaskState state = MaskState::make(1);
    state.mu[0] = 0.7;
    std::vector<double> d_mu(1, 0.0);
    accumulate_mask_loss_grad(state, 1.0, d_mu);
    CHECK(d_mu[0] == doctest::Approx(sigmoid_grad(0.7)).epsilon(1e-15));

    state.eta[0] = {0.3, -0.2, 1.1};
    std::vector<std::array<double, kMaxShDegree>> d_eta(1, {0, 0, 0});
    accumulate_sh_mask_loss_grad(state, 2.0, d_eta);
    CHECK(d_eta[0][0] == doctest::Approx(2.0 * 3.0 / 15.0 * sigmoid_grad(0.3)).epsilon(1e-15));
    CHECK(d_eta[0][1] == doctest::Approx(2.0 * 5.0 / 15.0 * sigmoid_grad(-0.2)).epsilon(1e-15));
    CHECK(d_eta[0][2] == doctest::Approx(2.0 * 7.0 / 15.0 * sigmoid_grad(1.1)).epsilon(1e-15));
}

TEST_CASE("mask state round-trips through its file format") {
    auto path = (std::filesystem::temp_directory_path() / "locogs_masks.bin").string();
    Rng rng(11);
    MaskState state = MaskState::make(17);
    for (auto& m : state.mu) m = rng.uniform(-3, 3);
    for (auto& e : state.eta) e = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    state.save(path);
    MaskState loaded = MaskState::load(path);
    CHECK(loaded.mu == state.mu);
    CHECK(loaded.eta == state.eta);
    CHECK(loaded.tau == state.tau);
    std::remove(path.c_str());
}
