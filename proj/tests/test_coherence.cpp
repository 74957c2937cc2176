#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "locogs/coherence.hpp"
#include "support/synthetic.hpp"

using namespace locogs;

TEST_CASE("contraction is the identity inside the unit ball") {
    Vec3 p{0.5, 0.0, 0.0};
    CHECK(contract(p) == p);
}

TEST_CASE("contraction of far points approaches norm 2") {
    Vec3 p{1e9, 0.0, 0.0};
    CHECK(norm(contract(p)) == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("contraction of (3,0,0) is (5/3,0,0)") {
    Vec3 c = contract({3.0, 0.0, 0.0});
    CHECK(c.x == doctest::Approx(5.0 / 3.0).epsilon(1e-12));
    CHECK(c.y == 0.0);
    CHECK(c.z == 0.0);
}

TEST_CASE("contract_to_unit maps into the unit cube") {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        Vec3 p{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)};
        Vec3 u = contract_to_unit(p);
        for (int a = 0; a < 3; ++a) {
            CHECK(u[a] >= 0.0);
            CHECK(u[a] <= 1.0);
        }
    }
}

TEST_CASE("two coincident gaussians always form the single pair") {
    SplatScene scene;
    scene.gaussians.push_back(test::default_gaussian());
    scene.gaussians.push_back(test::default_gaussian());
    scene.recompute_bounds();
    auto pairs = sample_pairs(scene, 0.1, 4, 9);
    REQUIRE(!pairs.empty());
    for (auto [i, k] : pairs) CHECK(((i == 0 && k == 1) || (i == 1 && k == 0)));
}

TEST_CASE("sampled pairs agree with the brute-force neighbor oracle") {
    SplatScene scene = test::random_scene(500, 21);
    double d = 0.02;  // squared contracted distance bound
    auto pairs = sample_pairs(scene, d, 2000, 4);
    REQUIRE(!pairs.empty());

    // Brute-force qualifying set.
    std::set<std::pair<uint32_t, uint32_t>> oracle;
    std::vector<Vec3> c(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) c[i] = contract(scene.gaussians[i].position);
    for (uint32_t i = 0; i < scene.size(); ++i)
        for (uint32_t k = 0; k < scene.size(); ++k)
            if (i != k && norm2(c[i] - c[k]) < d) oracle.insert({i, k});

    for (auto p : pairs) CHECK(oracle.count(p) == 1);
}

TEST_CASE("sampling is deterministic under the seed") {
    SplatScene scene = test::random_scene(300, 22);
    auto a = sample_pairs(scene, 0.05, 500, 7);
    auto b = sample_pairs(scene, 0.05, 500, 7);
    CHECK(a == b);
    auto c = sample_pairs(scene, 0.05, 500, 8);
    CHECK(a != c);
}

TEST_CASE("distance smaller than the closest pair raises") {
    SplatScene scene;
    for (int i = 0; i < 4; ++i) {
        Gaussian g = test::default_gaussian();
        g.position = {static_cast<double>(i), 0.0, 0.0};
        scene.gaussians.push_back(g);
    }
    scene.recompute_bounds();
    CHECK_THROWS_AS(sample_pairs(scene, 1e-8, 10, 1), CoherenceError);
}

TEST_CASE("attribute distances of identical gaussians are zero") {
    SplatScene scene;
    scene.gaussians.push_back(test::default_gaussian());
    scene.gaussians.push_back(test::default_gaussian());
    std::vector<IndexPair> pairs{{0, 1}};
    auto d = attribute_distances(scene, pairs);
    CHECK(d.opacity[0] == 0.0);
    CHECK(d.scale[0] == 0.0);
    CHECK(d.rotation[0] == 0.0);
    CHECK(d.base_color[0] == 0.0);
    CHECK(d.sh_rest[0] == 0.0);
}

TEST_CASE("quaternion double cover: q and -q have zero rotation distance") {
    SplatScene scene;
    Rng rng(5);
    Gaussian g = test::random_gaussian(rng);
    scene.gaussians.push_back(g);
    Gaussian h = g;
    for (int c = 0; c < 4; ++c) h.rotation[c] = -h.rotation[c];
    scene.gaussians.push_back(h);
    std::vector<IndexPair> pairs{{0, 1}};
    CHECK(attribute_distances(scene, pairs).rotation[0] == 0.0);
}

TEST_CASE("hand-built two-gaussian distances match manual computation") {
    SplatScene scene;
    Gaussian a = test::default_gaussian();
    a.opacity = 0.3;
    a.scale = {1.0, 2.0, 2.0};
    a.sh[0] = {0.1, 0.2, 0.2};
    Gaussian b = test::default_gaussian();
    b.opacity = 0.8;
    b.scale = {1.0, 2.0, 4.0};
    b.sh[0] = {0.4, 0.2, 0.6};
    b.bandwidth = 1;
    b.sh[1] = {0.3, 0.0, 0.4};
    scene.gaussians = {a, b};
    std::vector<IndexPair> pairs{{0, 1}};
    auto d = attribute_distances(scene, pairs);
    CHECK(d.opacity[0] == doctest::Approx(0.5));
    CHECK(d.scale[0] == doctest::Approx(2.0));
    CHECK(d.base_color[0] == doctest::Approx(0.5));
    CHECK(d.sh_rest[0] == doctest::Approx(0.5));  // missing block counts as zeros
}

TEST_CASE("smooth scenes show strictly increasing mean attribute distance") {
    SplatScene scene = test::smooth_scene(4000, 31);
    std::vector<double> thresholds{2e-4, 2e-3, 2e-2, 2e-1};
    auto report = coherence_report(scene, thresholds, 3000, 11);
    REQUIRE(report.buckets.size() == 4);
    for (int a = 0; a < kCoherenceAttributeCount; ++a)
        for (std::size_t b = 1; b < report.buckets.size(); ++b)
            CHECK(report.buckets[b].mean[a] > report.buckets[b - 1].mean[a]);
}

TEST_CASE("iid attributes show no coherence trend beyond noise") {
    SplatScene scene = test::iid_scene(4000, 32);
    std::vector<double> thresholds{2e-4, 2e-3, 2e-2, 2e-1};
    auto report = coherence_report(scene, thresholds, 3000, 12);
    // With independent attributes every bucket mean estimates the same
    // population mean; adjacent buckets must agree within sampling noise.
    for (int a = 0; a < kCoherenceAttributeCount; ++a) {
        for (std::size_t b = 1; b < report.buckets.size(); ++b) {
            double m0 = report.buckets[b - 1].mean[a];
            double m1 = report.buckets[b].mean[a];
            double se = std::sqrt(report.buckets[b - 1].sem[a] * report.buckets[b - 1].sem[a] +
                                  report.buckets[b].sem[a] * report.buckets[b].sem[a]);
            CHECK(std::fabs(m1 - m0) < 3.0 * se);
        }
    }
}

TEST_CASE("single bucket on a 2-gaussian scene yields one pair") {
    SplatScene scene;
    scene.gaussians.push_back(test::default_gaussian());
    scene.gaussians.push_back(test::default_gaussian());
    scene.gaussians[1].position = {0.001, 0.0, 0.0};
    scene.recompute_bounds();
    std::vector<double> thresholds{0.1};
    auto report = coherence_report(scene, thresholds, 1, 3);
    REQUIRE(report.buckets.size() == 1);
    CHECK(report.buckets[0].pair_count == 1);
}

TEST_CASE("report serialization is deterministic") {
    SplatScene scene = test::smooth_scene(500, 33);
    std::vector<double> thresholds{1e-3, 1e-2};
    auto r1 = coherence_report(scene, thresholds, 200, 5);
    auto r2 = coherence_report(scene, thresholds, 200, 5);
    CHECK(r1.to_json() == r2.to_json());
    CHECK(r1.to_csv() == r2.to_csv());
    CHECK(!r1.to_json().empty());
}

TEST_CASE("thresholds must be strictly increasing") {
    SplatScene scene = test::random_scene(10, 1);
    std::vector<double> bad{0.1, 0.1};
    CHECK_THROWS_AS(coherence_report(scene, bad, 10, 1), CoherenceError);
}
