// Core splat types: the full Gaussian record, the explicit/implicit attribute
// split, and the scene container. Scene order is significant; the codec
// association contract depends on it.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "locogs/math.hpp"

namespace locogs {

constexpr int kMaxShDegree = 3;
constexpr int kShCoeffCount = (kMaxShDegree + 1) * (kMaxShDegree + 1);  // 16 coefficient triples
constexpr int kShRestScalars = (kShCoeffCount - 1) * 3;                 // 45 residual scalars

// Number of coefficient triples for degrees 0..b inclusive.
inline int sh_coeffs_for_bandwidth(int b) { return (b + 1) * (b + 1); }

struct Gaussian {
    Vec3 position;
    double opacity = 0.0;  // in [0,1]
    Vec3 scale{1.0, 1.0, 1.0};
    Quat rotation;  // unit
    // sh[0] is the base color k0; degree l occupies indices l*l .. (l+1)*(l+1)-1.
    // Coefficients beyond the bandwidth are kept zero.
    std::array<Vec3, kShCoeffCount> sh{};
    int bandwidth = 0;  // in {0..3}
};

struct ExplicitAttrs {
    Vec3 position;
    double base_scale = 1.0;  // gamma > 0
    Vec3 base_color;          // k0
    int bandwidth = 0;
};

struct ImplicitAttrs {
    double opacity = 0.0;
    Vec3 norm_scale{1.0, 1.0, 1.0};  // components in (0,1]
    Quat rotation;
    // Residual blocks for degrees 1..3; index i holds sh[i+1] of the full record.
    std::array<Vec3, kShCoeffCount - 1> sh_rest{};
    int bandwidth = 0;
};

enum class PositionPrecision : uint8_t { Full = 0, Half = 1 };

// Unknown per-vertex PLY column carried through load/save untouched.
struct ExtraField {
    std::string name;
    std::vector<float> values;  // one per gaussian
};

struct SplatScene {
    std::vector<Gaussian> gaussians;
    Aabb bounds;
    std::map<std::string, std::string> metadata;
    std::vector<ExtraField> extra_fields;
    PositionPrecision position_precision = PositionPrecision::Full;

    std::size_t size() const { return gaussians.size(); }
    void recompute_bounds() {
        bounds = Aabb{};
        for (const auto& g : gaussians) bounds.extend(g.position);
    }
};

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Checks the type invariants; throws ModelError naming the record index.
void validate(const Gaussian& g, std::size_t index = 0);
void validate(const SplatScene& scene);

// gamma is the maximum scale component, so norm_scale lands in (0,1]^3.
std::pair<ExplicitAttrs, ImplicitAttrs> split_attrs(const Gaussian& g);
Gaussian compose_attrs(const ExplicitAttrs& e, const ImplicitAttrs& i);

// Sigma = R S S^T R^T.
Mat3 covariance(const Gaussian& g);

// Rounds each position coordinate through binary16 and marks the scene as
// half precision. Required before encoding if the scene was trained at full
// precision.
SplatScene quantize_positions_to_half(const SplatScene& scene);

}  // namespace locogs
