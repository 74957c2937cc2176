// IEEE 754 binary16 conversions (software, round-to-nearest-even) and the
// order-preserving integer reinterpretation used by the position coder.
#pragma once

#include <cstdint>
#include <cstring>

namespace locogs {

// float32 -> binary16 bits, round-to-nearest-even, overflow to infinity.
inline uint16_t float_to_half_bits(float f) {
    uint32_t x;
    std::memcpy(&x, &f, 4);
    uint32_t sign = (x >> 16) & 0x8000u;
    uint32_t mant = x & 0x007FFFFFu;
    int32_t exp = static_cast<int32_t>((x >> 23) & 0xFF);

    if (exp == 0xFF) {  // inf / NaN
        return static_cast<uint16_t>(sign | 0x7C00u | (mant ? 0x0200u : 0u));
    }
    int32_t e = exp - 127 + 15;
    if (e >= 0x1F) {  // overflow -> inf
        return static_cast<uint16_t>(sign | 0x7C00u);
    }
    if (e <= 0) {  // subnormal or zero
        if (e < -10) return static_cast<uint16_t>(sign);
        mant |= 0x00800000u;  // implicit leading one
        int shift = 14 - e;   // shift to 10-bit mantissa, e in [-10, 0]
        uint32_t half_mant = mant >> shift;
        uint32_t rem = mant & ((1u << shift) - 1);
        uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half_mant & 1u))) half_mant++;
        return static_cast<uint16_t>(sign | half_mant);  // carry rolls into exponent correctly
    }
    uint32_t half_mant = mant >> 13;
    uint32_t rem = mant & 0x1FFFu;
    uint16_t h = static_cast<uint16_t>(sign | (static_cast<uint32_t>(e) << 10) | half_mant);
    if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) h++;  // carry may bump exponent; that is correct
    return h;
}

inline float half_bits_to_float(uint16_t h) {
    uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
    uint32_t exp = (h >> 10) & 0x1Fu;
    uint32_t mant = h & 0x3FFu;
    uint32_t x;
    if (exp == 0) {
        if (mant == 0) {
            x = sign;
        } else {  // subnormal: normalize
            int e = -1;
            uint32_t m = mant;
            do {
                m <<= 1;
                e++;
            } while (!(m & 0x400u));
            x = sign | static_cast<uint32_t>(127 - 15 - e) << 23 | ((m & 0x3FFu) << 13);
        }
    } else if (exp == 0x1F) {
        x = sign | 0x7F800000u | (mant << 13);
    } else {
        x = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    float f;
    std::memcpy(&f, &x, 4);
    return f;
}

inline uint16_t double_to_half_bits(double d) { return float_to_half_bits(static_cast<float>(d)); }
inline double half_bits_to_double(uint16_t h) { return static_cast<double>(half_bits_to_float(h)); }

inline bool half_is_finite(uint16_t h) { return ((h >> 10) & 0x1Fu) != 0x1Fu; }

// Order-preserving reinterpretation of a finite half as a signed integer.
// Positive values map to their magnitude bits; negative values map to
// -(magnitude+1), which keeps -0.0 and +0.0 distinct and makes the map a
// strictly monotone bijection from all finite halfs onto [-31744, 31743].
inline int32_t half_reinterpret_to_int(uint16_t h) {
    int32_t mag = h & 0x7FFF;
    return (h & 0x8000) ? -(mag + 1) : mag;
}

inline uint16_t half_reinterpret_from_int(int32_t v) {
    if (v >= 0) return static_cast<uint16_t>(v);
    return static_cast<uint16_t>(0x8000 | (-(v + 1)));
}

}  // namespace locogs
