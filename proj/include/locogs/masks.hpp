// Learnable pruning masks and adaptive SH bandwidth masks. Forward passes use
// hard binary indicators; gradients pass straight through the indicator to
// the underlying parameters (STE).
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "locogs/model.hpp"

namespace locogs {

struct MaskState {
    std::vector<double> mu;                          // per-gaussian pruning parameter
    std::vector<std::array<double, kMaxShDegree>> eta;  // per-gaussian SH mask parameters
    double tau = 0.01;
    double tau_sh = 0.01;

    static MaskState make(std::size_t n, double initial_pass_probability = 0.9);
    std::size_t size() const { return mu.size(); }

    bool pass(std::size_t i) const { return sigmoid(mu[i]) >= tau; }
    // Cumulative product of degree indicators: a failed degree kills all above it.
    int sh_mask(std::size_t i, int degree) const;  // 0 or 1, degree in 1..L

    void save(const std::string& path) const;
    static MaskState load(const std::string& path);
};

// SH mask loss weights (2l+1)/((L+1)^2-1) for degrees 1..L.
double sh_mask_weight(int degree, int max_degree = kMaxShDegree);

// Masked scene view: opacity and scale scaled by the pruning mask, SH blocks
// zeroed by the cumulative bandwidth masks.
SplatScene apply_masks(const SplatScene& scene, const MaskState& state);

double mask_loss(const MaskState& state);
double sh_mask_loss(const MaskState& state);

// STE gradients of the two losses plus any upstream through masked values.
// d(mask_loss)/d mu_i = sigma'(mu_i)/N etc.; helpers used by the trainer.
void accumulate_mask_loss_grad(const MaskState& state, double weight, std::vector<double>& d_mu);
void accumulate_sh_mask_loss_grad(const MaskState& state, double weight,
                                  std::vector<std::array<double, kMaxShDegree>>& d_eta);

std::vector<int> derive_bandwidth(const MaskState& state);

struct PruneResult {
    SplatScene scene;
    MaskState state;
    std::vector<std::size_t> survivors;  // new index -> old index
};

PruneResult prune(const SplatScene& scene, const MaskState& state);

}  // namespace locogs
