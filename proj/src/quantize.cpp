#include "locogs/quantize.hpp"

#include <cmath>
#include <stdexcept>

namespace locogs {

namespace {

// Relative floor below which the spread is treated as numerically constant.
constexpr double kDegenerateEps = 1e-12;

uint16_t code_for(double x, const QuantSpec& spec) {
    double lo = spec.lo(), step = spec.step();
    double q = std::floor((x - lo) / step);
    double max_code = static_cast<double>((1u << spec.bits) - 1u);
    if (q < 0.0) q = 0.0;
    if (q > max_code) q = max_code;
    return static_cast<uint16_t>(q);
}

}  // namespace

QuantResult quantize(std::span<const double> values, int bits) {
    if (bits < 1 || bits > 16) throw std::invalid_argument("quantize: bits outside {1..16}");
    if (values.empty()) throw std::invalid_argument("quantize: empty input");

    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    double sd = std::sqrt(var);

    QuantSpec spec;
    spec.bits = bits;
    spec.mean = mean;
    spec.stddev = sd;
    spec.degenerate = sd <= kDegenerateEps * (1.0 + std::fabs(mean));

    QuantResult result;
    result.spec = spec;
    result.codes = quantize_with_spec(values, spec);
    return result;
}

std::vector<uint16_t> quantize_with_spec(std::span<const double> values, const QuantSpec& spec) {
    std::vector<uint16_t> codes(values.size());
    if (spec.degenerate) return codes;  // all zero
    for (std::size_t i = 0; i < values.size(); ++i) codes[i] = code_for(values[i], spec);
    return codes;
}

double dequantize_one(uint16_t code, const QuantSpec& spec) {
    if (spec.degenerate) return spec.mean;
    return spec.lo() + (static_cast<double>(code) + 0.5) * spec.step();
}

std::vector<double> dequantize(std::span<const uint16_t> codes, const QuantSpec& spec) {
    std::vector<double> out(codes.size());
    for (std::size_t i = 0; i < codes.size(); ++i) out[i] = dequantize_one(codes[i], spec);
    return out;
}

}  // namespace locogs
