// Adaptive order-0 entropy coding over a declared symbol alphabet, built on a
// carry-propagating byte-oriented range coder. The model starts uniform and
// adapts as symbols stream through, which is what makes Morton-sorted
// (locally coherent) streams code smaller than shuffled ones.
#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace locogs {

class EntropyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Encoded layout: varint symbol count, then the range-coder payload.
std::vector<uint8_t> entropy_encode(std::span<const uint16_t> symbols, int alphabet_size);
std::vector<uint8_t> entropy_encode_bytes(std::span<const uint8_t> bytes);

std::vector<uint16_t> entropy_decode(std::span<const uint8_t> stream, int alphabet_size);
std::vector<uint8_t> entropy_decode_bytes(std::span<const uint8_t> stream);

}  // namespace locogs
