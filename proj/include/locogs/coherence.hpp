// Local-coherence analysis: neighbor-pair sampling at controlled spatial
// distances in contracted coordinates, per-attribute Euclidean distance
// statistics, and a serializable report.
#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "locogs/contraction.hpp"
#include "locogs/model.hpp"

namespace locogs {

class CoherenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using IndexPair = std::pair<uint32_t, uint32_t>;

// Samples up to `count` pairs (i,k) with lo <= |contract(p_i)-contract(p_k)|^2 < hi,
// deterministically under `seed`, using a uniform grid index. Throws
// CoherenceError when no qualifying pair exists.
std::vector<IndexPair> sample_pairs_in_annulus(const SplatScene& scene, double lo, double hi,
                                               std::size_t count, uint64_t seed);

// The single-threshold form: squared distance strictly below d.
inline std::vector<IndexPair> sample_pairs(const SplatScene& scene, double d, std::size_t count,
                                           uint64_t seed) {
    return sample_pairs_in_annulus(scene, 0.0, d, count, seed);
}

struct AttributeDistances {
    std::vector<double> opacity, scale, rotation, base_color, sh_rest;
};

AttributeDistances attribute_distances(const SplatScene& scene, std::span<const IndexPair> pairs);

constexpr int kCoherenceAttributeCount = 5;
extern const char* const kCoherenceAttributeNames[kCoherenceAttributeCount];

struct CoherenceBucket {
    double threshold_lo = 0.0;  // squared contracted distance annulus
    double threshold_hi = 0.0;
    std::size_t pair_count = 0;  // distinct pairs
    double mean[kCoherenceAttributeCount] = {};
    double sem[kCoherenceAttributeCount] = {};  // standard error of the mean
    std::vector<std::size_t> histogram[kCoherenceAttributeCount];
};

struct CoherenceReport {
    std::vector<double> thresholds;  // strictly increasing bucket upper bounds
    std::size_t sample_cap = 0;
    uint64_t seed = 0;
    int histogram_bins = 0;
    double histogram_max[kCoherenceAttributeCount] = {};  // bin range is [0, max]
    std::vector<CoherenceBucket> buckets;

    std::string to_json() const;
    std::string to_csv() const;
};

// Default geometric ladder of squared-distance thresholds for desk-scale scenes.
std::vector<double> default_coherence_thresholds();

CoherenceReport coherence_report(const SplatScene& scene, std::span<const double> thresholds,
                                 std::size_t pairs_per_bucket, uint64_t seed,
                                 int histogram_bins = 32);

}  // namespace locogs
