// Distribution-clipped uniform quantization: values are clipped to
// mean +/- (3 + 3(k-1)/15) standard deviations before k-bit midpoint
// quantization, so the code range tracks the data distribution rather than
// its extremes.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace locogs {

struct QuantSpec {
    int bits = 8;        // k in {1..16}
    double mean = 0.0;
    double stddev = 0.0;
    bool degenerate = false;  // constant input: every code is 0, dequant returns mean

    double clip_multiplier() const { return 3.0 + 3.0 * (bits - 1) / 15.0; }
    double lo() const { return mean - clip_multiplier() * stddev; }
    double hi() const { return mean + clip_multiplier() * stddev; }
    double step() const { return (hi() - lo()) / static_cast<double>(1u << bits); }
};

struct QuantResult {
    std::vector<uint16_t> codes;
    QuantSpec spec;
};

QuantResult quantize(std::span<const double> values, int bits);

// Quantize against a fixed spec (used when re-coding with recorded parameters).
std::vector<uint16_t> quantize_with_spec(std::span<const double> values, const QuantSpec& spec);

std::vector<double> dequantize(std::span<const uint16_t> codes, const QuantSpec& spec);
double dequantize_one(uint16_t code, const QuantSpec& spec);

}  // namespace locogs
