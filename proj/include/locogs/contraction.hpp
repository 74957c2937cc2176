// Scene-coordinate contraction: identity inside the unit ball, radial squash
// into the ball of radius 2 outside, plus the affine map to the unit cube
// that the grid and Morton quantizers consume.
#pragma once

#include "locogs/math.hpp"

namespace locogs {

inline Vec3 contract(const Vec3& p) {
    double n = norm(p);
    if (n <= 1.0) return p;
    return p * ((2.0 - 1.0 / n) / n);
}

// contract() followed by the [-2,2]^3 -> [0,1]^3 affine map.
inline Vec3 contract_to_unit(const Vec3& p) {
    Vec3 c = contract(p);
    return {(c.x + 2.0) * 0.25, (c.y + 2.0) * 0.25, (c.z + 2.0) * 0.25};
}

// Jacobian of contract() at p (3x3, row-major). Identity inside the unit ball.
inline Mat3 contract_jacobian(const Vec3& p) {
    double n = norm(p);
    if (n <= 1.0) return Mat3::identity();
    // c = a(n) p with a = 2/n - 1/n^2; dc/dp = a I + a'(n)/n * p p^T
    double a = 2.0 / n - 1.0 / (n * n);
    double da_over_n = (-2.0 / (n * n) + 2.0 / (n * n * n)) / n;
    Mat3 j = Mat3::identity() * a;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) j(r, c) += da_over_n * p[r] * p[c];
    return j;
}

}  // namespace locogs
