#include "locogs/masks.hpp"

#include <fstream>
#include <stdexcept>

namespace locogs {

MaskState MaskState::make(std::size_t n, double initial_pass_probability) {
    MaskState s;
    double v = inv_sigmoid(initial_pass_probability);
    s.mu.assign(n, v);
    s.eta.assign(n, {v, v, v});
    return s;
}

int MaskState::sh_mask(std::size_t i, int degree) const {
    for (int l = 1; l <= degree; ++l)
        if (sigmoid(eta[i][static_cast<std::size_t>(l - 1)]) < tau_sh) return 0;
    return 1;
}

double sh_mask_weight(int degree, int max_degree) {
    return static_cast<double>(2 * degree + 1) /
           static_cast<double>((max_degree + 1) * (max_degree + 1) - 1);
}

SplatScene apply_masks(const SplatScene& scene, const MaskState& state) {
    if (scene.size() != state.size()) throw ModelError("apply_masks: size mismatch");
    SplatScene out = scene;
    for (std::size_t i = 0; i < out.gaussians.size(); ++i) {
        Gaussian& g = out.gaussians[i];
        double m = state.pass(i) ? 1.0 : 0.0;
        g.opacity *= m;
        g.scale *= m;
        for (int l = 1; l <= kMaxShDegree; ++l) {
            if (state.sh_mask(i, l)) continue;
            for (int c = l * l; c < (l + 1) * (l + 1); ++c) g.sh[c] = Vec3{};
        }
    }
    return out;
}

double mask_loss(const MaskState& state) {
    double total = 0.0;
    for (double m : state.mu) total += sigmoid(m);
    return total / static_cast<double>(state.size());
}

double sh_mask_loss(const MaskState& state) {
    double total = 0.0;
    for (const auto& eta : state.eta)
        for (int l = 1; l <= kMaxShDegree; ++l)
            total += sh_mask_weight(l) * sigmoid(eta[static_cast<std::size_t>(l - 1)]);
    return total / static_cast<double>(state.size());
}

void accumulate_mask_loss_grad(const MaskState& state, double weight, std::vector<double>& d_mu) {
    double n = static_cast<double>(state.size());
    for (std::size_t i = 0; i < state.size(); ++i)
        d_mu[i] += weight * sigmoid_grad(state.mu[i]) / n;
}

void accumulate_sh_mask_loss_grad(const MaskState& state, double weight,
                                  std::vector<std::array<double, kMaxShDegree>>& d_eta) {
    double n = static_cast<double>(state.size());
    for (std::size_t i = 0; i < state.size(); ++i)
        for (int l = 1; l <= kMaxShDegree; ++l)
            d_eta[i][static_cast<std::size_t>(l - 1)] +=
                weight * sh_mask_weight(l) * sigmoid_grad(state.eta[i][static_cast<std::size_t>(l - 1)]) / n;
}

std::vector<int> derive_bandwidth(const MaskState& state) {
    std::vector<int> out(state.size(), 0);
    for (std::size_t i = 0; i < state.size(); ++i) {
        int b = 0;
        for (int l = 1; l <= kMaxShDegree; ++l)
            if (state.sh_mask(i, l)) b = l;
        out[i] = b;
    }
    return out;
}

PruneResult prune(const SplatScene& scene, const MaskState& state) {
    if (scene.size() != state.size()) throw ModelError("prune: size mismatch");
    PruneResult out;
    out.scene = scene;
    out.scene.gaussians.clear();
    out.state.tau = state.tau;
    out.state.tau_sh = state.tau_sh;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (!state.pass(i)) continue;
        out.scene.gaussians.push_back(scene.gaussians[i]);
        out.state.mu.push_back(state.mu[i]);
        out.state.eta.push_back(state.eta[i]);
        out.survivors.push_back(i);
    }
    for (auto& e : out.scene.extra_fields) {
        std::vector<float> keep;
        keep.reserve(out.survivors.size());
        for (std::size_t i : out.survivors) keep.push_back(e.values[i]);
        e.values = std::move(keep);
    }
    out.scene.recompute_bounds();
    return out;
}

void MaskState::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ModelError("cannot write mask state " + path);
    uint32_t magic = 0x534D434Cu;  // "LCMS"
    uint64_t n = mu.size();
    out.write(reinterpret_cast<const char*>(&magic), 4);
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(reinterpret_cast<const char*>(&tau), 8);
    out.write(reinterpret_cast<const char*>(&tau_sh), 8);
    out.write(reinterpret_cast<const char*>(mu.data()), static_cast<long>(n * 8));
    for (const auto& e : eta) out.write(reinterpret_cast<const char*>(e.data()), 24);
    if (!out) throw ModelError("write failure on mask state " + path);
}

MaskState MaskState::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError("cannot open mask state " + path);
    uint32_t magic;
    uint64_t n;
    MaskState s;
    in.read(reinterpret_cast<char*>(&magic), 4);
    in.read(reinterpret_cast<char*>(&n), 8);
    in.read(reinterpret_cast<char*>(&s.tau), 8);
    in.read(reinterpret_cast<char*>(&s.tau_sh), 8);
    if (!in || magic != 0x534D434Cu) throw ModelError("bad mask state file " + path);
    s.mu.resize(n);
    s.eta.resize(n);
    in.read(reinterpret_cast<char*>(s.mu.data()), static_cast<long>(n * 8));
    for (auto& e : s.eta) in.read(reinterpret_cast<char*>(e.data()), 24);
    if (!in) throw ModelError("truncated mask state " + path);
    return s;
}

}  // namespace locogs
