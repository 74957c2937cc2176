#include "locogs/coherence.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "locogs/rng.hpp"

namespace locogs {

const char* const kCoherenceAttributeNames[kCoherenceAttributeCount] = {
    "opacity", "scale", "rotation", "base_color", "sh_rest"};

namespace {

struct CellKey {
    int64_t x, y, z;
    bool operator==(const CellKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct CellHash {
    std::size_t operator()(const CellKey& k) const {
        uint64_t h = static_cast<uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
        h ^= static_cast<uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full;
        h ^= static_cast<uint64_t>(k.z) * 0x165667B19E3779F9ull;
        h ^= h >> 29;
        return static_cast<std::size_t>(h);
    }
};

class GridIndex {
public:
    GridIndex(const std::vector<Vec3>& points, double cell) : points_(points), cell_(cell) {
        for (std::size_t i = 0; i < points.size(); ++i)
            cells_[key_of(points[i])].push_back(static_cast<uint32_t>(i));
    }

    // Indices k != i with lo <= |p_k - p_i|^2 < hi.
    void neighbors(uint32_t i, double lo, double hi, std::vector<uint32_t>& out) const {
        out.clear();
        CellKey c = key_of(points_[i]);
        for (int64_t dx = -1; dx <= 1; ++dx)
            for (int64_t dy = -1; dy <= 1; ++dy)
                for (int64_t dz = -1; dz <= 1; ++dz) {
                    auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
                    if (it == cells_.end()) continue;
                    for (uint32_t k : it->second) {
                        if (k == i) continue;
                        double d2 = norm2(points_[k] - points_[i]);
                        if (d2 >= lo && d2 < hi) out.push_back(k);
                    }
                }
    }

private:
    CellKey key_of(const Vec3& p) const {
        return {static_cast<int64_t>(std::floor(p.x / cell_)),
                static_cast<int64_t>(std::floor(p.y / cell_)),
                static_cast<int64_t>(std::floor(p.z / cell_))};
    }
    const std::vector<Vec3>& points_;
    double cell_;
    std::unordered_map<CellKey, std::vector<uint32_t>, CellHash> cells_;
};

double quat_distance(const Quat& a, const Quat& b) {
    // q and -q are the same rotation; align signs before differencing.
    double sign = dot(a, b) < 0.0 ? -1.0 : 1.0;
    double s = 0;
    for (int c = 0; c < 4; ++c) {
        double d = a[c] - sign * b[c];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

std::vector<IndexPair> sample_pairs_in_annulus(const SplatScene& scene, double lo, double hi,
                                               std::size_t count, uint64_t seed) {
    if (scene.gaussians.empty()) throw CoherenceError("empty scene");
    if (!(hi > 0.0) || hi <= lo) throw CoherenceError("bad distance annulus");

    std::vector<Vec3> contracted(scene.gaussians.size());
    for (std::size_t i = 0; i < scene.gaussians.size(); ++i)
        contracted[i] = contract(scene.gaussians[i].position);

    // Cell edge of sqrt(hi) keeps every qualifying partner within one cell ring.
    GridIndex index(contracted, std::sqrt(hi));

    Rng rng(seed);
    std::vector<IndexPair> pairs;
    pairs.reserve(count);
    std::vector<uint32_t> neighborhood;
    std::size_t attempts = 0;
    const std::size_t max_attempts = std::max<std::size_t>(4096, count * 64);
    while (pairs.size() < count && attempts < max_attempts) {
        ++attempts;
        uint32_t i = static_cast<uint32_t>(rng.below(scene.gaussians.size()));
        index.neighbors(i, lo, hi, neighborhood);
        if (neighborhood.empty()) continue;
        uint32_t k = neighborhood[rng.below(neighborhood.size())];
        pairs.emplace_back(i, k);
    }
    if (pairs.empty()) {
        // Distinguish "unlucky sampling" from "no qualifying pair exists".
        for (uint32_t i = 0; i < scene.gaussians.size(); ++i) {
            index.neighbors(i, lo, hi, neighborhood);
            if (!neighborhood.empty())
                throw CoherenceError("sampling budget exhausted before any pair was drawn");
        }
        throw CoherenceError("no qualifying pairs at this spatial distance");
    }
    return pairs;
}

AttributeDistances attribute_distances(const SplatScene& scene, std::span<const IndexPair> pairs) {
    AttributeDistances out;
    out.opacity.reserve(pairs.size());
    out.scale.reserve(pairs.size());
    out.rotation.reserve(pairs.size());
    out.base_color.reserve(pairs.size());
    out.sh_rest.reserve(pairs.size());
    for (const auto& [i, k] : pairs) {
        const Gaussian& a = scene.gaussians[i];
        const Gaussian& b = scene.gaussians[k];
        out.opacity.push_back(std::fabs(a.opacity - b.opacity));
        out.scale.push_back(norm(a.scale - b.scale));
        out.rotation.push_back(quat_distance(a.rotation, b.rotation));
        out.base_color.push_back(norm(a.sh[0] - b.sh[0]));
        // Degrees absent from a gaussian are zero blocks by the model invariant,
        // so the full-range sum handles mismatched bandwidths.
        double s = 0;
        for (int c = 1; c < kShCoeffCount; ++c) s += norm2(a.sh[c] - b.sh[c]);
        out.sh_rest.push_back(std::sqrt(s));
    }
    return out;
}

std::vector<double> default_coherence_thresholds() { return {1e-4, 4e-4, 1.6e-3, 6.4e-3}; }

CoherenceReport coherence_report(const SplatScene& scene, std::span<const double> thresholds,
                                 std::size_t pairs_per_bucket, uint64_t seed, int histogram_bins) {
    if (thresholds.size() < 1) throw CoherenceError("at least one threshold required");
    for (std::size_t i = 1; i < thresholds.size(); ++i)
        if (!(thresholds[i] > thresholds[i - 1]))
            throw CoherenceError("thresholds must be strictly increasing");

    CoherenceReport report;
    report.thresholds.assign(thresholds.begin(), thresholds.end());
    report.sample_cap = pairs_per_bucket;
    report.seed = seed;
    report.histogram_bins = histogram_bins;

    std::vector<AttributeDistances> all_distances;
    for (std::size_t b = 0; b < thresholds.size(); ++b) {
        double lo = b == 0 ? 0.0 : thresholds[b - 1];
        auto pairs = sample_pairs_in_annulus(scene, lo, thresholds[b], pairs_per_bucket, seed + b);
        // Sampling draws with replacement; statistics use distinct pairs so the
        // standard errors are honest in sparse annuli.
        for (auto& p : pairs)
            if (p.first > p.second) std::swap(p.first, p.second);
        std::sort(pairs.begin(), pairs.end());
        pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
        CoherenceBucket bucket;
        bucket.threshold_lo = lo;
        bucket.threshold_hi = thresholds[b];
        bucket.pair_count = pairs.size();
        report.buckets.push_back(bucket);
        all_distances.push_back(attribute_distances(scene, pairs));
    }

    auto attr_array = [](const AttributeDistances& d, int a) -> const std::vector<double>& {
        switch (a) {
            case 0: return d.opacity;
            case 1: return d.scale;
            case 2: return d.rotation;
            case 3: return d.base_color;
            default: return d.sh_rest;
        }
    };

    for (int a = 0; a < kCoherenceAttributeCount; ++a) {
        double max_val = 0.0;
        for (const auto& d : all_distances)
            for (double v : attr_array(d, a)) max_val = std::fmax(max_val, v);
        report.histogram_max[a] = max_val > 0.0 ? max_val : 1.0;
    }

    for (std::size_t b = 0; b < report.buckets.size(); ++b) {
        CoherenceBucket& bucket = report.buckets[b];
        for (int a = 0; a < kCoherenceAttributeCount; ++a) {
            const auto& vals = attr_array(all_distances[b], a);
            bucket.histogram[a].assign(static_cast<std::size_t>(histogram_bins), 0);
            double sum = 0.0;
            for (double v : vals) {
                sum += v;
                int bin = static_cast<int>(v / report.histogram_max[a] * histogram_bins);
                bin = std::clamp(bin, 0, histogram_bins - 1);
                bucket.histogram[a][static_cast<std::size_t>(bin)]++;
            }
            double n = static_cast<double>(vals.size());
            bucket.mean[a] = vals.empty() ? 0.0 : sum / n;
            double var = 0.0;
            for (double v : vals) var += (v - bucket.mean[a]) * (v - bucket.mean[a]);
            bucket.sem[a] = vals.size() > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
        }
    }
    return report;
}

std::string CoherenceReport::to_json() const {
    nlohmann::json j;
    j["thresholds"] = thresholds;
    j["sample_cap"] = sample_cap;
    j["seed"] = seed;
    j["histogram_bins"] = histogram_bins;
    for (int a = 0; a < kCoherenceAttributeCount; ++a)
        j["histogram_max"][kCoherenceAttributeNames[a]] = histogram_max[a];
    for (const auto& b : buckets) {
        nlohmann::json jb;
        jb["threshold_lo"] = b.threshold_lo;
        jb["threshold_hi"] = b.threshold_hi;
        jb["pair_count"] = b.pair_count;
        for (int a = 0; a < kCoherenceAttributeCount; ++a) {
            jb["mean"][kCoherenceAttributeNames[a]] = b.mean[a];
            jb["sem"][kCoherenceAttributeNames[a]] = b.sem[a];
            jb["histogram"][kCoherenceAttributeNames[a]] = b.histogram[a];
        }
        j["buckets"].push_back(jb);
    }
    return j.dump(2);
}

std::string CoherenceReport::to_csv() const {
    std::ostringstream out;
    out.precision(12);
    out << "# summary\nattribute,bucket,threshold_lo,threshold_hi,pair_count,mean,sem\n";
    for (std::size_t b = 0; b < buckets.size(); ++b)
        for (int a = 0; a < kCoherenceAttributeCount; ++a)
            out << kCoherenceAttributeNames[a] << ',' << b << ',' << buckets[b].threshold_lo << ','
                << buckets[b].threshold_hi << ',' << buckets[b].pair_count << ','
                << buckets[b].mean[a] << ',' << buckets[b].sem[a] << '\n';
    out << "# histogram\nattribute,bucket,bin_lo,bin_hi,count\n";
    for (std::size_t b = 0; b < buckets.size(); ++b)
        for (int a = 0; a < kCoherenceAttributeCount; ++a)
            for (int bin = 0; bin < histogram_bins; ++bin) {
                double w = histogram_max[a] / histogram_bins;
                out << kCoherenceAttributeNames[a] << ',' << b << ',' << bin * w << ','
                    << (bin + 1) * w << ',' << buckets[b].histogram[a][static_cast<std::size_t>(bin)]
                    << '\n';
            }
    return out.str();
}

}  // namespace locogs
