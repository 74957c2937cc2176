// The locality-aware neural field: a multi-resolution hash grid followed by
// one small MLP head per implicit attribute (normalized scale, rotation,
// opacity, residual SH). Forward evaluation and exact reverse-mode gradients
// for training; parameters expose a canonical flat layout for the optimizer
// and the codec.
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "locogs/contraction.hpp"
#include "locogs/model.hpp"

namespace locogs {

enum class OpacityActivation : uint8_t { Sigmoid = 0, ExpClamped = 1 };

class FieldError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct HashGridConfig {
    int levels = 16;
    int min_res = 16;
    int max_res = 4096;
    int table_size_log2 = 19;  // 19 base variant / 17 small variant
    int feature_dim = 2;
    OpacityActivation opacity_activation = OpacityActivation::Sigmoid;

    static constexpr int kHiddenDim = 64;

    void validate() const;

    double growth_factor() const;
    int level_resolution(int level) const;  // floor(min_res * g^level)
    bool level_is_dense(int level) const;   // (N+1)^3 fits the hash table
    std::size_t level_entries(int level) const;
    std::size_t grid_param_count() const;
    std::size_t head_param_count() const;
    int feature_vector_dim() const { return levels * feature_dim; }
};

// Gradient accumulators mirroring the canonical parameter layout.
struct FieldGradients {
    std::vector<double> grid;
    std::vector<double> heads;

    explicit FieldGradients(const HashGridConfig& cfg)
        : grid(cfg.grid_param_count(), 0.0), heads(cfg.head_param_count(), 0.0) {}
    void reset() {
        std::fill(grid.begin(), grid.end(), 0.0);
        std::fill(heads.begin(), heads.end(), 0.0);
    }
};

// Upstream derivatives with respect to the implicit attributes.
struct ImplicitGrad {
    Vec3 d_norm_scale;
    Quat d_rotation{0, 0, 0, 0};
    double d_opacity = 0.0;
    std::array<Vec3, kShCoeffCount - 1> d_sh_rest{};
};

class HashGridField {
public:
    HashGridField(const HashGridConfig& cfg, uint64_t seed);

    const HashGridConfig& config() const { return cfg_; }
    uint64_t seed() const { return seed_; }

    // Trilinear multi-level feature lookup; `unit_pos` in [0,1]^3.
    std::vector<double> grid_lookup(const Vec3& unit_pos) const;

    ImplicitAttrs eval_implicit(const Vec3& position, int bandwidth) const;

    // Accumulates parameter gradients into `out` and returns dL/d position.
    Vec3 eval_implicit_grad(const Vec3& position, int bandwidth, const ImplicitGrad& upstream,
                            FieldGradients& out) const;

    // Canonical flat parameters: grid tables level-major then entry-major,
    // heads in order (scale, rotation, opacity, sh), each as W0,b0,W1,b1,W2,b2
    // row-major. The codec and the checkpoint format rely on this order.
    std::pair<std::vector<double>, std::vector<double>> param_vectors() const;
    void set_param_vectors(std::span<const double> grid, std::span<const double> heads);

    std::span<double> mutable_grid() { return grid_; }
    std::span<double> mutable_heads() { return heads_; }
    std::span<const double> grid_params() const { return grid_; }
    std::span<const double> head_params() const { return heads_; }

    void save_checkpoint(const std::string& path) const;
    static HashGridField load_checkpoint(const std::string& path);

    // Finest-level table indices touched when evaluating at `unit_pos`.
    std::vector<std::size_t> finest_level_corners(const Vec3& unit_pos) const;

private:
    struct HeadLayout {
        std::size_t offset = 0;  // into heads_
        int out_dim = 0;
    };
    struct MlpCache {
        std::vector<double> h0, h1, pre_out;
    };

    void head_forward(int head, std::span<const double> input, MlpCache& cache) const;
    // Accumulates weight grads at heads_ layout offsets; adds input grads into d_input.
    void head_backward(int head, std::span<const double> input, const MlpCache& cache,
                       std::span<const double> d_out, FieldGradients& out,
                       std::span<double> d_input) const;

    HashGridConfig cfg_;
    uint64_t seed_;
    std::vector<double> grid_;
    std::vector<double> heads_;
    std::vector<std::size_t> level_offset_;
    std::array<HeadLayout, 4> head_layout_;
};

}  // namespace locogs
