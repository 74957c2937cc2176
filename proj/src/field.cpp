#include "locogs/field.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "locogs/rng.hpp"

namespace locogs {

namespace {

// Spatial hash primes from the multi-resolution hash grid literature; these
// are constants of the checkpoint/container format.
constexpr uint64_t kHashPrimes[3] = {1ull, 2654435761ull, 805459861ull};

constexpr int kHeadCount = 4;  // scale, rotation, opacity, sh
constexpr int kHeadOutDims[kHeadCount] = {3, 4, 1, kShRestScalars};

std::size_t mlp_param_count(int in_dim, int hidden, int out_dim) {
    return static_cast<std::size_t>(in_dim) * hidden + hidden +
           static_cast<std::size_t>(hidden) * hidden + hidden +
           static_cast<std::size_t>(hidden) * out_dim + out_dim;
}

struct CornerWeights {
    std::size_t index[8];
    double weight[8];
    double frac[3];
    std::size_t base[3];  // integer cell coords
    int res;
    bool dense;
};

}  // namespace

void HashGridConfig::validate() const {
    if (levels < 1) throw FieldError("config: levels must be >= 1");
    if (min_res < 1 || (levels > 1 && min_res >= max_res))
        throw FieldError("config: need min_res < max_res");
    if (table_size_log2 < 4 || table_size_log2 > 24)
        throw FieldError("config: table_size_log2 outside [4,24]");
    if (feature_dim < 1 || feature_dim > 8) throw FieldError("config: feature_dim outside [1,8]");
}

double HashGridConfig::growth_factor() const {
    if (levels <= 1) return 1.0;
    return std::exp((std::log(static_cast<double>(max_res)) -
                     std::log(static_cast<double>(min_res))) /
                    static_cast<double>(levels - 1));
}

int HashGridConfig::level_resolution(int level) const {
    double g = growth_factor();
    return static_cast<int>(std::floor(static_cast<double>(min_res) * std::pow(g, level) + 1e-9));
}

bool HashGridConfig::level_is_dense(int level) const {
    uint64_t n = static_cast<uint64_t>(level_resolution(level)) + 1;
    return n * n * n <= (1ull << table_size_log2);
}

std::size_t HashGridConfig::level_entries(int level) const {
    if (level_is_dense(level)) {
        uint64_t n = static_cast<uint64_t>(level_resolution(level)) + 1;
        return static_cast<std::size_t>(n * n * n);
    }
    return std::size_t{1} << table_size_log2;
}

std::size_t HashGridConfig::grid_param_count() const {
    std::size_t total = 0;
    for (int l = 0; l < levels; ++l) total += level_entries(l) * static_cast<std::size_t>(feature_dim);
    return total;
}

std::size_t HashGridConfig::head_param_count() const {
    std::size_t total = 0;
    for (int h = 0; h < kHeadCount; ++h)
        total += mlp_param_count(feature_vector_dim(), kHiddenDim, kHeadOutDims[h]);
    return total;
}

HashGridField::HashGridField(const HashGridConfig& cfg, uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    level_offset_.resize(static_cast<std::size_t>(cfg_.levels));
    std::size_t offset = 0;
    for (int l = 0; l < cfg_.levels; ++l) {
        level_offset_[static_cast<std::size_t>(l)] = offset;
        offset += cfg_.level_entries(l) * static_cast<std::size_t>(cfg_.feature_dim);
    }

    Rng rng(seed);
    grid_.resize(cfg_.grid_param_count());
    for (auto& v : grid_) v = rng.uniform(-1e-4, 1e-4);

    heads_.resize(cfg_.head_param_count());
    const int in = cfg_.feature_vector_dim();
    const int hidden = HashGridConfig::kHiddenDim;
    std::size_t pos = 0;
    for (int h = 0; h < kHeadCount; ++h) {
        head_layout_[static_cast<std::size_t>(h)] = {pos, kHeadOutDims[h]};
        const int out = kHeadOutDims[h];
        auto fill_layer = [&](int fan_in, int n_weights, int n_bias) {
            double bound = std::sqrt(6.0 / fan_in);
            for (int i = 0; i < n_weights; ++i) heads_[pos++] = rng.uniform(-bound, bound);
            for (int i = 0; i < n_bias; ++i) heads_[pos++] = 0.0;
        };
        if (h == 3) {
            // SH head starts at zero so training begins view-independent.
            pos += mlp_param_count(in, hidden, out);
        } else {
            fill_layer(in, in * hidden, hidden);
            fill_layer(hidden, hidden * hidden, hidden);
            fill_layer(hidden, hidden * out, out);
        }
        if (h == 1) {
            // Rotation head biases toward the identity quaternion, keeping the
            // normalization well away from zero at initialization.
            std::size_t bias2 = pos - static_cast<std::size_t>(out);
            heads_[bias2] = 1.0;
        }
    }
}

namespace {

CornerWeights corner_weights(const HashGridConfig& cfg, int level, const Vec3& unit_pos) {
    CornerWeights cw;
    cw.res = cfg.level_resolution(level);
    cw.dense = cfg.level_is_dense(level);
    const uint64_t table_mask = (1ull << cfg.table_size_log2) - 1;
    const uint64_t side = static_cast<uint64_t>(cw.res) + 1;

    for (int a = 0; a < 3; ++a) {
        double scaled = unit_pos[a] * cw.res;
        double f = std::floor(scaled);
        if (f > cw.res - 1) f = cw.res - 1;  // x == 1 lands in the last cell
        if (f < 0) f = 0;
        cw.base[a] = static_cast<std::size_t>(f);
        cw.frac[a] = scaled - f;
    }
    for (int corner = 0; corner < 8; ++corner) {
        uint64_t cx = cw.base[0] + ((corner >> 0) & 1);
        uint64_t cy = cw.base[1] + ((corner >> 1) & 1);
        uint64_t cz = cw.base[2] + ((corner >> 2) & 1);
        double w = 1.0;
        w *= (corner & 1) ? cw.frac[0] : 1.0 - cw.frac[0];
        w *= (corner & 2) ? cw.frac[1] : 1.0 - cw.frac[1];
        w *= (corner & 4) ? cw.frac[2] : 1.0 - cw.frac[2];
        cw.weight[corner] = w;
        if (cw.dense) {
            cw.index[corner] = static_cast<std::size_t>(cx + cy * side + cz * side * side);
        } else {
            uint64_t h = cx * kHashPrimes[0] ^ cy * kHashPrimes[1] ^ cz * kHashPrimes[2];
            cw.index[corner] = static_cast<std::size_t>(h & table_mask);
        }
    }
    return cw;
}

}  // namespace

std::vector<double> HashGridField::grid_lookup(const Vec3& unit_pos) const {
    std::vector<double> features(static_cast<std::size_t>(cfg_.feature_vector_dim()), 0.0);
    const int fd = cfg_.feature_dim;
    for (int l = 0; l < cfg_.levels; ++l) {
        CornerWeights cw = corner_weights(cfg_, l, unit_pos);
        const double* table = grid_.data() + level_offset_[static_cast<std::size_t>(l)];
        double* out = features.data() + static_cast<std::size_t>(l) * fd;
        for (int corner = 0; corner < 8; ++corner) {
            const double* entry = table + cw.index[corner] * static_cast<std::size_t>(fd);
            for (int j = 0; j < fd; ++j) out[j] += cw.weight[corner] * entry[j];
        }
    }
    return features;
}

std::vector<std::size_t> HashGridField::finest_level_corners(const Vec3& unit_pos) const {
    CornerWeights cw = corner_weights(cfg_, cfg_.levels - 1, unit_pos);
    return std::vector<std::size_t>(cw.index, cw.index + 8);
}

void HashGridField::head_forward(int head, std::span<const double> input, MlpCache& cache) const {
    const HeadLayout& hl = head_layout_[static_cast<std::size_t>(head)];
    const int in = cfg_.feature_vector_dim();
    const int hidden = HashGridConfig::kHiddenDim;
    const int out = hl.out_dim;
    const double* p = heads_.data() + hl.offset;
    const double* w0 = p;
    const double* b0 = w0 + in * hidden;
    const double* w1 = b0 + hidden;
    const double* b1 = w1 + hidden * hidden;
    const double* w2 = b1 + hidden;
    const double* b2 = w2 + static_cast<std::size_t>(hidden) * out;

    cache.h0.assign(static_cast<std::size_t>(hidden), 0.0);
    for (int i = 0; i < hidden; ++i) {
        double s = b0[i];
        const double* row = w0 + static_cast<std::size_t>(i) * in;
        for (int j = 0; j < in; ++j) s += row[j] * input[static_cast<std::size_t>(j)];
        cache.h0[static_cast<std::size_t>(i)] = s > 0.0 ? s : 0.0;
    }
    cache.h1.assign(static_cast<std::size_t>(hidden), 0.0);
    for (int i = 0; i < hidden; ++i) {
        double s = b1[i];
        const double* row = w1 + static_cast<std::size_t>(i) * hidden;
        for (int j = 0; j < hidden; ++j) s += row[j] * cache.h0[static_cast<std::size_t>(j)];
        cache.h1[static_cast<std::size_t>(i)] = s > 0.0 ? s : 0.0;
    }
    cache.pre_out.assign(static_cast<std::size_t>(out), 0.0);
    for (int i = 0; i < out; ++i) {
        double s = b2[i];
        const double* row = w2 + static_cast<std::size_t>(i) * hidden;
        for (int j = 0; j < hidden; ++j) s += row[j] * cache.h1[static_cast<std::size_t>(j)];
        cache.pre_out[static_cast<std::size_t>(i)] = s;
    }
}

void HashGridField::head_backward(int head, std::span<const double> input, const MlpCache& cache,
                                  std::span<const double> d_out, FieldGradients& out,
                                  std::span<double> d_input) const {
    const HeadLayout& hl = head_layout_[static_cast<std::size_t>(head)];
    const int in = cfg_.feature_vector_dim();
    const int hidden = HashGridConfig::kHiddenDim;
    const int od = hl.out_dim;
    const double* p = heads_.data() + hl.offset;
    const double* w0 = p;
    const double* w1 = w0 + in * hidden + hidden;
    const double* w2 = w1 + hidden * hidden + hidden;
    double* g = out.heads.data() + hl.offset;
    double* gw0 = g;
    double* gb0 = gw0 + in * hidden;
    double* gw1 = gb0 + hidden;
    double* gb1 = gw1 + hidden * hidden;
    double* gw2 = gb1 + hidden;
    double* gb2 = gw2 + static_cast<std::size_t>(hidden) * od;

    std::vector<double> dh1(static_cast<std::size_t>(hidden), 0.0);
    for (int i = 0; i < od; ++i) {
        double d = d_out[static_cast<std::size_t>(i)];
        if (d == 0.0) continue;
        gb2[i] += d;
        const double* row = w2 + static_cast<std::size_t>(i) * hidden;
        double* grow = gw2 + static_cast<std::size_t>(i) * hidden;
        for (int j = 0; j < hidden; ++j) {
            grow[j] += d * cache.h1[static_cast<std::size_t>(j)];
            dh1[static_cast<std::size_t>(j)] += d * row[j];
        }
    }
    std::vector<double> dh0(static_cast<std::size_t>(hidden), 0.0);
    for (int i = 0; i < hidden; ++i) {
        if (cache.h1[static_cast<std::size_t>(i)] <= 0.0) continue;  // ReLU gate
        double d = dh1[static_cast<std::size_t>(i)];
        if (d == 0.0) continue;
        gb1[i] += d;
        const double* row = w1 + static_cast<std::size_t>(i) * hidden;
        double* grow = gw1 + static_cast<std::size_t>(i) * hidden;
        for (int j = 0; j < hidden; ++j) {
            grow[j] += d * cache.h0[static_cast<std::size_t>(j)];
            dh0[static_cast<std::size_t>(j)] += d * row[j];
        }
    }
    for (int i = 0; i < hidden; ++i) {
        if (cache.h0[static_cast<std::size_t>(i)] <= 0.0) continue;
        double d = dh0[static_cast<std::size_t>(i)];
        if (d == 0.0) continue;
        gb0[i] += d;
        const double* row = w0 + static_cast<std::size_t>(i) * in;
        double* grow = gw0 + static_cast<std::size_t>(i) * in;
        for (int j = 0; j < in; ++j) {
            grow[j] += d * input[static_cast<std::size_t>(j)];
            d_input[static_cast<std::size_t>(j)] += d * row[j];
        }
    }
}

ImplicitAttrs HashGridField::eval_implicit(const Vec3& position, int bandwidth) const {
    Vec3 unit = contract_to_unit(position);
    std::vector<double> f = grid_lookup(unit);

    ImplicitAttrs attrs;
    attrs.bandwidth = bandwidth;
    MlpCache cache;

    head_forward(0, f, cache);
    for (int j = 0; j < 3; ++j) attrs.norm_scale[j] = sigmoid(cache.pre_out[static_cast<std::size_t>(j)]);

    head_forward(1, f, cache);
    Quat v{cache.pre_out[0], cache.pre_out[1], cache.pre_out[2], cache.pre_out[3]};
    attrs.rotation = normalized(v);

    head_forward(2, f, cache);
    attrs.opacity = cfg_.opacity_activation == OpacityActivation::Sigmoid
                        ? sigmoid(cache.pre_out[0])
                        : std::fmin(1.0, std::exp(cache.pre_out[0]));

    head_forward(3, f, cache);
    int coeffs = sh_coeffs_for_bandwidth(bandwidth) - 1;
    for (int c = 0; c < coeffs; ++c)
        for (int ch = 0; ch < 3; ++ch)
            attrs.sh_rest[static_cast<std::size_t>(c)][ch] =
                cache.pre_out[static_cast<std::size_t>(c * 3 + ch)];
    return attrs;
}

Vec3 HashGridField::eval_implicit_grad(const Vec3& position, int bandwidth,
                                       const ImplicitGrad& upstream, FieldGradients& out) const {
    Vec3 unit = contract_to_unit(position);
    std::vector<double> f = grid_lookup(unit);
    std::vector<double> d_f(f.size(), 0.0);
    MlpCache cache;

    // scale head: sigmoid
    {
        head_forward(0, f, cache);
        std::vector<double> d(3);
        for (int j = 0; j < 3; ++j) {
            double s = sigmoid(cache.pre_out[static_cast<std::size_t>(j)]);
            d[static_cast<std::size_t>(j)] = upstream.d_norm_scale[j] * s * (1.0 - s);
        }
        head_backward(0, f, cache, d, out, d_f);
    }
    // rotation head: normalization
    {
        head_forward(1, f, cache);
        Quat v{cache.pre_out[0], cache.pre_out[1], cache.pre_out[2], cache.pre_out[3]};
        double n = norm(v);
        Quat q = normalized(v);
        double qdot = 0.0;
        for (int c = 0; c < 4; ++c) qdot += q[c] * upstream.d_rotation[c];
        std::vector<double> d(4);
        for (int c = 0; c < 4; ++c)
            d[static_cast<std::size_t>(c)] = (upstream.d_rotation[c] - q[c] * qdot) / n;
        head_backward(1, f, cache, d, out, d_f);
    }
    // opacity head
    {
        head_forward(2, f, cache);
        double pre = cache.pre_out[0];
        double d;
        if (cfg_.opacity_activation == OpacityActivation::Sigmoid) {
            double s = sigmoid(pre);
            d = upstream.d_opacity * s * (1.0 - s);
        } else {
            double e = std::exp(pre);
            d = e < 1.0 ? upstream.d_opacity * e : 0.0;
        }
        std::vector<double> dv{d};
        head_backward(2, f, cache, dv, out, d_f);
    }
    // sh head: identity on active coefficients, zero beyond the bandwidth
    {
        head_forward(3, f, cache);
        std::vector<double> d(static_cast<std::size_t>(kShRestScalars), 0.0);
        int coeffs = sh_coeffs_for_bandwidth(bandwidth) - 1;
        for (int c = 0; c < coeffs; ++c)
            for (int ch = 0; ch < 3; ++ch)
                d[static_cast<std::size_t>(c * 3 + ch)] = upstream.d_sh_rest[static_cast<std::size_t>(c)][ch];
        head_backward(3, f, cache, d, out, d_f);
    }

    // Trilinear backward: distribute feature grads to the tables and the position.
    const int fd = cfg_.feature_dim;
    Vec3 d_unit{0, 0, 0};
    for (int l = 0; l < cfg_.levels; ++l) {
        CornerWeights cw = corner_weights(cfg_, l, unit);
        const std::size_t base = level_offset_[static_cast<std::size_t>(l)];
        const double* df_level = d_f.data() + static_cast<std::size_t>(l) * fd;
        const double* table = grid_.data() + base;
        for (int corner = 0; corner < 8; ++corner) {
            double* gentry = out.grid.data() + base + cw.index[corner] * static_cast<std::size_t>(fd);
            const double* entry = table + cw.index[corner] * static_cast<std::size_t>(fd);
            double feat_dot = 0.0;
            for (int j = 0; j < fd; ++j) {
                gentry[j] += cw.weight[corner] * df_level[j];
                feat_dot += entry[j] * df_level[j];
            }
            // dW/dfrac_a, then dfrac/dunit = resolution.
            for (int a = 0; a < 3; ++a) {
                double dw = (corner & (1 << a)) ? 1.0 : -1.0;
                for (int b = 0; b < 3; ++b) {
                    if (b == a) continue;
                    dw *= (corner & (1 << b)) ? cw.frac[b] : 1.0 - cw.frac[b];
                }
                d_unit[a] += feat_dot * dw * cw.res;
            }
        }
    }

    // unit = (contract(p) + 2) / 4
    Vec3 d_contract = d_unit * 0.25;
    Mat3 j = contract_jacobian(position);
    return j.transposed() * d_contract;
}

std::pair<std::vector<double>, std::vector<double>> HashGridField::param_vectors() const {
    return {grid_, heads_};
}

void HashGridField::set_param_vectors(std::span<const double> grid, std::span<const double> heads) {
    if (grid.size() != grid_.size() || heads.size() != heads_.size())
        throw FieldError("set_param_vectors: size mismatch");
    std::copy(grid.begin(), grid.end(), grid_.begin());
    std::copy(heads.begin(), heads.end(), heads_.begin());
}

namespace {

constexpr uint32_t kCheckpointMagic = 0x4446434Cu;  // "LCFD" little-endian
constexpr uint16_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

void HashGridField::save_checkpoint(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FieldError("cannot write checkpoint " + path);
    write_pod(out, kCheckpointMagic);
    write_pod(out, kCheckpointVersion);
    write_pod(out, static_cast<uint16_t>(cfg_.opacity_activation));
    write_pod(out, static_cast<int32_t>(cfg_.levels));
    write_pod(out, static_cast<int32_t>(cfg_.min_res));
    write_pod(out, static_cast<int32_t>(cfg_.max_res));
    write_pod(out, static_cast<int32_t>(cfg_.table_size_log2));
    write_pod(out, static_cast<int32_t>(cfg_.feature_dim));
    write_pod(out, seed_);
    write_pod(out, static_cast<uint64_t>(grid_.size()));
    write_pod(out, static_cast<uint64_t>(heads_.size()));
    for (double v : grid_) write_pod(out, static_cast<float>(v));
    for (double v : heads_) write_pod(out, static_cast<float>(v));
    if (!out) throw FieldError("write failure on checkpoint " + path);
}

HashGridField HashGridField::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FieldError("cannot open checkpoint " + path);
    uint32_t magic;
    uint16_t version, activation;
    read_pod(in, magic);
    read_pod(in, version);
    read_pod(in, activation);
    if (!in || magic != kCheckpointMagic) throw FieldError("bad checkpoint magic");
    if (version != kCheckpointVersion) throw FieldError("unsupported checkpoint version");
    HashGridConfig cfg;
    int32_t v;
    read_pod(in, v); cfg.levels = v;
    read_pod(in, v); cfg.min_res = v;
    read_pod(in, v); cfg.max_res = v;
    read_pod(in, v); cfg.table_size_log2 = v;
    read_pod(in, v); cfg.feature_dim = v;
    cfg.opacity_activation = static_cast<OpacityActivation>(activation);
    uint64_t seed, grid_count, head_count;
    read_pod(in, seed);
    read_pod(in, grid_count);
    read_pod(in, head_count);
    HashGridField field(cfg, seed);
    if (grid_count != field.grid_.size() || head_count != field.heads_.size())
        throw FieldError("checkpoint parameter count mismatch");
    for (auto& g : field.grid_) {
        float f;
        read_pod(in, f);
        g = f;
    }
    for (auto& h : field.heads_) {
        float f;
        read_pod(in, f);
        h = f;
    }
    if (!in) throw FieldError("truncated checkpoint " + path);
    return field;
}

}  // namespace locogs
