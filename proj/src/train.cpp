#include "locogs/train.hpp"

#include <algorithm>
#include <cmath>

#include "locogs/rng.hpp"

namespace locogs {

void AdamState::resize_rows(const std::vector<std::size_t>& survivors, std::size_t row_width) {
    std::vector<double> nm(survivors.size() * row_width), nv(survivors.size() * row_width);
    for (std::size_t j = 0; j < survivors.size(); ++j)
        for (std::size_t k = 0; k < row_width; ++k) {
            nm[j * row_width + k] = m[survivors[j] * row_width + k];
            nv[j * row_width + k] = v[survivors[j] * row_width + k];
        }
    m = std::move(nm);
    v = std::move(nv);
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, const AdamParams& ap) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw TrainError("adam_step: shape mismatch");
    state.t += 1;
    double bc1 = 1.0 - std::pow(ap.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(ap.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double g = grads[i];
        state.m[i] = ap.beta1 * state.m[i] + (1.0 - ap.beta1) * g;
        state.v[i] = ap.beta2 * state.v[i] + (1.0 - ap.beta2) * g * g;
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + ap.eps);
    }
}

void TrainConfig::validate() const {
    if (lambda < 0.0 || lambda > 1.0) throw TrainError("config: lambda outside [0,1]");
    if (iterations < 0 || warmup_iters < 1) throw TrainError("config: bad iteration counts");
    if (batch_size < 1) throw TrainError("config: bad batch size");
    if (prune_interval < 1) throw TrainError("config: bad prune interval");
}

double field_lr_at(const TrainConfig& cfg, int iteration) {
    double ramp = std::fmin(1.0, static_cast<double>(iteration + 1) / cfg.warmup_iters);
    double span = cfg.iterations > 1 ? static_cast<double>(iteration) / (cfg.iterations - 1) : 0.0;
    double decay = cfg.lr_field_start *
                   std::pow(cfg.lr_field_end / cfg.lr_field_start, std::clamp(span, 0.0, 1.0));
    return ramp * decay;
}

LossResult total_loss(const RenderBuffer& rendered, const RenderBuffer& target,
                      const MaskState& masks, const TrainConfig& cfg) {
    if (rendered.width != target.width || rendered.height != target.height)
        throw TrainError("total_loss: image size mismatch");
    LossResult result;
    result.d_pixels = RenderBuffer(rendered.width, rendered.height);

    const double n = static_cast<double>(rendered.planes.size());
    double l1 = 0.0;
    for (std::size_t i = 0; i < rendered.planes.size(); ++i) {
        double d = rendered.planes[i] - target.planes[i];
        l1 += std::fabs(d);
        result.d_pixels.planes[i] =
            (1.0 - cfg.lambda) * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
    }
    result.l1 = l1 / n;

    if (cfg.lambda > 0.0) {
        RenderBuffer d_ssim(rendered.width, rendered.height);
        result.ssim_value = ssim_with_grad(rendered, target, d_ssim);
        for (std::size_t i = 0; i < rendered.planes.size(); ++i)
            result.d_pixels.planes[i] -= cfg.lambda * d_ssim.planes[i];
    } else {
        result.ssim_value = ssim(rendered, target);
    }

    result.mask_term = masks.size() > 0 ? mask_loss(masks) : 0.0;
    result.sh_mask_term = masks.size() > 0 ? sh_mask_loss(masks) : 0.0;
    result.total = (1.0 - cfg.lambda) * result.l1 + cfg.lambda * (1.0 - result.ssim_value) +
                   cfg.lambda_mask * result.mask_term + cfg.lambda_sh_mask * result.sh_mask_term;
    return result;
}

// ---- distillation ----

namespace {

struct ImplicitTargets {
    std::vector<ImplicitAttrs> attrs;
};

ImplicitTargets make_targets(const SplatScene& scene) {
    ImplicitTargets t;
    t.attrs.reserve(scene.size());
    for (const auto& g : scene.gaussians) t.attrs.push_back(split_attrs(g).second);
    return t;
}

// Squared error and upstream gradients for one sample; rotation is
// sign-aligned to respect the quaternion double cover.
double sample_loss(const ImplicitAttrs& pred, const ImplicitAttrs& target, double inv_batch,
                   ImplicitGrad& up) {
    double loss = 0.0;
    double d_o = pred.opacity - target.opacity;
    loss += d_o * d_o;
    up.d_opacity = 2.0 * d_o * inv_batch;
    for (int a = 0; a < 3; ++a) {
        double d = pred.norm_scale[a] - target.norm_scale[a];
        loss += d * d;
        up.d_norm_scale[a] = 2.0 * d * inv_batch;
    }
    double sign = dot(pred.rotation, target.rotation) < 0.0 ? -1.0 : 1.0;
    for (int c = 0; c < 4; ++c) {
        double d = pred.rotation[c] - sign * target.rotation[c];
        loss += d * d;
        up.d_rotation[c] = 2.0 * d * inv_batch;
    }
    for (int c = 0; c < kShCoeffCount - 1; ++c) {
        for (int ch = 0; ch < 3; ++ch) {
            double d = pred.sh_rest[static_cast<std::size_t>(c)][ch] -
                       target.sh_rest[static_cast<std::size_t>(c)][ch];
            loss += d * d;
            up.d_sh_rest[static_cast<std::size_t>(c)][ch] = 2.0 * d * inv_batch;
        }
    }
    return loss;
}

}  // namespace

std::map<std::string, double> field_rmse(const SplatScene& scene, const HashGridField& field) {
    double so = 0, ss = 0, sr = 0, sk = 0;
    for (const auto& g : scene.gaussians) {
        ImplicitAttrs target = split_attrs(g).second;
        ImplicitAttrs pred = field.eval_implicit(g.position, kMaxShDegree);
        so += (pred.opacity - target.opacity) * (pred.opacity - target.opacity);
        ss += norm2(pred.norm_scale - target.norm_scale) / 3.0;
        double sign = dot(pred.rotation, target.rotation) < 0.0 ? -1.0 : 1.0;
        double r2 = 0;
        for (int c = 0; c < 4; ++c) {
            double d = pred.rotation[c] - sign * target.rotation[c];
            r2 += d * d;
        }
        sr += r2 / 4.0;
        double k2 = 0;
        for (int c = 0; c < kShCoeffCount - 1; ++c)
            k2 += norm2(pred.sh_rest[static_cast<std::size_t>(c)] -
                        target.sh_rest[static_cast<std::size_t>(c)]);
        sk += k2 / kShRestScalars;
    }
    double n = static_cast<double>(scene.size());
    return {{"opacity", std::sqrt(so / n)},
            {"norm_scale", std::sqrt(ss / n)},
            {"rotation", std::sqrt(sr / n)},
            {"sh_rest", std::sqrt(sk / n)}};
}

DistillResult distill(const SplatScene& scene, HashGridField& field, MaskState& masks,
                      const TrainConfig& cfg, const ProgressFn& progress) {
    cfg.validate();
    if (scene.gaussians.empty()) throw TrainError("distill: empty scene");
    (void)masks;  // carried through unchanged; distillation has no photometric term

    ImplicitTargets targets = make_targets(scene);
    Rng rng(cfg.seed);
    FieldGradients grads(field.config());
    AdamState grid_state(field.grid_params().size());
    AdamState head_state(field.head_params().size());

    DistillResult result;
    result.loss_history.reserve(static_cast<std::size_t>(cfg.iterations));
    const std::size_t batch =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), scene.size());

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        grads.reset();
        double loss = 0.0;
        double inv_batch = 1.0 / static_cast<double>(batch);
        for (std::size_t bi = 0; bi < batch; ++bi) {
            std::size_t i = rng.below(scene.size());
            ImplicitAttrs pred = field.eval_implicit(scene.gaussians[i].position, kMaxShDegree);
            ImplicitGrad up;
            loss += sample_loss(pred, targets.attrs[i], inv_batch, up) * inv_batch;
            field.eval_implicit_grad(scene.gaussians[i].position, kMaxShDegree, up, grads);
        }
        if (!std::isfinite(loss))
            throw TrainError("distill diverged at iteration " + std::to_string(iter));
        double lr = field_lr_at(cfg, iter);
        adam_step(field.mutable_grid(), grads.grid, grid_state, lr);
        adam_step(field.mutable_heads(), grads.heads, head_state, lr);
        result.loss_history.push_back(loss);
        if (progress && (iter % 50 == 0 || iter + 1 == cfg.iterations))
            progress({iter, loss, loss, scene.size()});
    }
    result.rmse = field_rmse(scene, field);
    return result;
}

// ---- end-to-end toy loop ----

namespace {

struct TrainerState {
    std::vector<double> pos;    // 3N
    std::vector<double> gamma;  // N
    std::vector<double> k0;     // 3N
    MaskState masks;
    AdamState pos_state, gamma_state, k0_state, mu_state, eta_state;

    std::size_t size() const { return gamma.size(); }
};

MaskState masks_with_thresholds(const TrainConfig& cfg, std::size_t n) {
    MaskState m = MaskState::make(n);
    m.tau = cfg.tau;
    m.tau_sh = cfg.tau_sh;
    return m;
}

// Composes the current full gaussians (pre-mask) from explicit params + field.
std::vector<Gaussian> compose_gaussians(const TrainerState& st, const HashGridField& field,
                                        std::vector<ImplicitAttrs>& implicit_cache) {
    std::vector<Gaussian> out(st.size());
    implicit_cache.resize(st.size());
    for (std::size_t i = 0; i < st.size(); ++i) {
        Vec3 p{st.pos[3 * i], st.pos[3 * i + 1], st.pos[3 * i + 2]};
        ImplicitAttrs imp = field.eval_implicit(p, kMaxShDegree);
        implicit_cache[i] = imp;
        Gaussian& g = out[i];
        g.position = p;
        g.opacity = imp.opacity;
        g.scale = imp.norm_scale * st.gamma[i];
        g.rotation = imp.rotation;
        g.bandwidth = kMaxShDegree;
        g.sh[0] = {st.k0[3 * i], st.k0[3 * i + 1], st.k0[3 * i + 2]};
        for (int c = 1; c < kShCoeffCount; ++c) g.sh[c] = imp.sh_rest[static_cast<std::size_t>(c - 1)];
    }
    return out;
}

}  // namespace

TrainResult train_e2e(const std::vector<std::pair<RenderBuffer, Camera>>& views,
                      const SplatScene& init_scene, const HashGridConfig& field_cfg,
                      const TrainConfig& cfg, const ProgressFn& progress) {
    cfg.validate();
    if (views.empty()) throw TrainError("train_e2e: at least one view required");
    if (init_scene.gaussians.empty()) throw TrainError("train_e2e: empty initial scene");

    HashGridField field(field_cfg, cfg.seed);
    TrainerState st;
    st.masks = masks_with_thresholds(cfg, init_scene.size());
    for (const auto& g : init_scene.gaussians) {
        auto [e, imp] = split_attrs(g);
        st.pos.insert(st.pos.end(), {e.position.x, e.position.y, e.position.z});
        st.gamma.push_back(e.base_scale);
        st.k0.insert(st.k0.end(), {e.base_color.x, e.base_color.y, e.base_color.z});
    }
    st.pos_state = AdamState(st.pos.size());
    st.gamma_state = AdamState(st.gamma.size());
    st.k0_state = AdamState(st.k0.size());
    st.mu_state = AdamState(st.size());
    st.eta_state = AdamState(st.size() * kMaxShDegree);
    AdamState grid_state(field.grid_params().size());
    AdamState head_state(field.head_params().size());

    TrainResult result{SplatScene{}, field, st.masks, {}, {}};
    std::vector<ImplicitAttrs> implicit_cache;
    FieldGradients field_grads(field.config());
    std::vector<double> pos_grad_accum(st.size(), 0.0);
    int grad_accum_iters = 0;

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        const auto& [target, camera] = views[static_cast<std::size_t>(iter) % views.size()];

        std::vector<Gaussian> full = compose_gaussians(st, field, implicit_cache);
        SplatScene masked;
        masked.gaussians = full;
        for (std::size_t i = 0; i < st.size(); ++i) {
            Gaussian& g = masked.gaussians[i];
            double m = st.masks.pass(i) ? 1.0 : 0.0;
            g.opacity *= m;
            g.scale *= m;
            for (int l = 1; l <= kMaxShDegree; ++l)
                if (!st.masks.sh_mask(i, l))
                    for (int c = l * l; c < (l + 1) * (l + 1); ++c) g.sh[c] = Vec3{};
        }

        RenderGraph graph(masked, camera);
        LossResult loss = total_loss(graph.image(), target, st.masks, cfg);
        if (!std::isfinite(loss.total))
            throw TrainError("train_e2e diverged at iteration " + std::to_string(iter));
        result.l1_history.push_back(loss.l1);
        SceneGrads sg = graph.backward(loss.d_pixels);

        // Accumulate per-parameter gradients with the straight-through masks.
        std::vector<double> d_pos(st.pos.size(), 0.0), d_gamma(st.size(), 0.0),
            d_k0(st.k0.size(), 0.0), d_mu(st.size(), 0.0), d_eta(st.size() * kMaxShDegree, 0.0);
        field_grads.reset();
        for (std::size_t i = 0; i < st.size(); ++i) {
            const ImplicitAttrs& imp = implicit_cache[i];
            double m = st.masks.pass(i) ? 1.0 : 0.0;
            Vec3 s_unmasked = imp.norm_scale * st.gamma[i];

            ImplicitGrad up;
            up.d_opacity = m * sg.d_opacity[i];
            Vec3 ds = sg.d_scale[i];
            d_gamma[i] += m * dot(ds, imp.norm_scale);
            up.d_norm_scale = ds * (m * st.gamma[i]);
            up.d_rotation = sg.d_rotation[i];
            d_mu[i] += sigmoid_grad(st.masks.mu[i]) *
                       (sg.d_opacity[i] * imp.opacity + dot(ds, s_unmasked));

            d_k0[3 * i] += sg.d_sh[i][0].x;
            d_k0[3 * i + 1] += sg.d_sh[i][0].y;
            d_k0[3 * i + 2] += sg.d_sh[i][0].z;

            // Residual SH with cumulative masks and per-degree STE.
            for (int l = 1; l <= kMaxShDegree; ++l) {
                int ml = st.masks.sh_mask(i, l);
                double dot_sum = 0.0;
                for (int c = l * l; c < (l + 1) * (l + 1); ++c) {
                    up.d_sh_rest[static_cast<std::size_t>(c - 1)] = sg.d_sh[i][static_cast<std::size_t>(c)] * ml;
                    dot_sum += dot(sg.d_sh[i][static_cast<std::size_t>(c)],
                                   imp.sh_rest[static_cast<std::size_t>(c - 1)]);
                }
                // d eta^j for j <= l: sigma'(eta^j) * prod of other indicators.
                for (int j = 1; j <= l; ++j) {
                    double prod = 1.0;
                    for (int j2 = 1; j2 <= l; ++j2) {
                        if (j2 == j) continue;
                        prod *= sigmoid(st.masks.eta[i][static_cast<std::size_t>(j2 - 1)]) >= st.masks.tau_sh
                                    ? 1.0
                                    : 0.0;
                    }
                    d_eta[i * kMaxShDegree + static_cast<std::size_t>(j - 1)] +=
                        dot_sum * prod * sigmoid_grad(st.masks.eta[i][static_cast<std::size_t>(j - 1)]);
                }
            }

            Vec3 p{st.pos[3 * i], st.pos[3 * i + 1], st.pos[3 * i + 2]};
            Vec3 dp_field = field.eval_implicit_grad(p, kMaxShDegree, up, field_grads);
            Vec3 dp = sg.d_position[i] + dp_field;
            d_pos[3 * i] += dp.x;
            d_pos[3 * i + 1] += dp.y;
            d_pos[3 * i + 2] += dp.z;
            pos_grad_accum[i] += norm(dp);
        }
        ++grad_accum_iters;
        accumulate_mask_loss_grad(st.masks, cfg.lambda_mask, d_mu);
        {
            std::vector<std::array<double, kMaxShDegree>> tmp(st.size(), {0, 0, 0});
            accumulate_sh_mask_loss_grad(st.masks, cfg.lambda_sh_mask, tmp);
            for (std::size_t i = 0; i < st.size(); ++i)
                for (int l = 0; l < kMaxShDegree; ++l)
                    d_eta[i * kMaxShDegree + static_cast<std::size_t>(l)] += tmp[i][static_cast<std::size_t>(l)];
        }

        double flr = field_lr_at(cfg, iter);
        AdamParams pos_params;
        pos_params.eps = 1e-15;
        adam_step(st.pos, d_pos, st.pos_state, cfg.lr_position, pos_params);
        adam_step(st.gamma, d_gamma, st.gamma_state, cfg.lr_gamma);
        adam_step(st.k0, d_k0, st.k0_state, cfg.lr_color);
        adam_step(st.masks.mu, d_mu, st.mu_state, cfg.lr_mask);
        {
            std::vector<double> eta_flat(st.size() * kMaxShDegree);
            for (std::size_t i = 0; i < st.size(); ++i)
                for (int l = 0; l < kMaxShDegree; ++l)
                    eta_flat[i * kMaxShDegree + static_cast<std::size_t>(l)] =
                        st.masks.eta[i][static_cast<std::size_t>(l)];
            adam_step(eta_flat, d_eta, st.eta_state, cfg.lr_mask);
            for (std::size_t i = 0; i < st.size(); ++i)
                for (int l = 0; l < kMaxShDegree; ++l)
                    st.masks.eta[i][static_cast<std::size_t>(l)] =
                        eta_flat[i * kMaxShDegree + static_cast<std::size_t>(l)];
        }
        adam_step(field.mutable_grid(), field_grads.grid, grid_state, flr);
        adam_step(field.mutable_heads(), field_grads.heads, head_state, flr);

        if (iter + 1 >= cfg.prune_start_iter && (iter + 1) % cfg.prune_interval == 0 &&
            iter + 1 < cfg.iterations) {
            std::vector<std::size_t> survivors;
            for (std::size_t i = 0; i < st.size(); ++i)
                if (st.masks.pass(i)) survivors.push_back(i);
            if (survivors.empty()) throw TrainError("train_e2e: every gaussian pruned");
            auto keep = [&survivors](std::vector<double>& vec, std::size_t width) {
                std::vector<double> out(survivors.size() * width);
                for (std::size_t j = 0; j < survivors.size(); ++j)
                    for (std::size_t k = 0; k < width; ++k)
                        out[j * width + k] = vec[survivors[j] * width + k];
                vec = std::move(out);
            };
            keep(st.pos, 3);
            keep(st.gamma, 1);
            keep(st.k0, 3);
            keep(pos_grad_accum, 1);
            keep(st.masks.mu, 1);
            {
                std::vector<std::array<double, kMaxShDegree>> eta;
                eta.reserve(survivors.size());
                for (std::size_t i : survivors) eta.push_back(st.masks.eta[i]);
                st.masks.eta = std::move(eta);
            }
            st.pos_state.resize_rows(survivors, 3);
            st.gamma_state.resize_rows(survivors, 1);
            st.k0_state.resize_rows(survivors, 3);
            st.mu_state.resize_rows(survivors, 1);
            st.eta_state.resize_rows(survivors, kMaxShDegree);
            result.survivors_at_prune.push_back(survivors.size());
        }

        if (cfg.densify_enabled && (iter + 1) % cfg.densify_interval == 0 &&
            iter + 1 < cfg.iterations && grad_accum_iters > 0) {
            std::size_t before = st.size();
            auto grow = [](std::vector<double>& vec, AdamState& state, std::span<const double> row) {
                vec.insert(vec.end(), row.begin(), row.end());
                state.m.insert(state.m.end(), row.size(), 0.0);
                state.v.insert(state.v.end(), row.size(), 0.0);
            };
            for (std::size_t i = 0; i < before; ++i) {
                double avg = pos_grad_accum[i] / grad_accum_iters;
                if (avg <= cfg.densify_grad_threshold || !st.masks.pass(i)) continue;
                if (st.gamma[i] < cfg.densify_scale_threshold) {
                    // Clone in place; the copy picks up its own gradients afterwards.
                    double row3[3] = {st.pos[3 * i], st.pos[3 * i + 1], st.pos[3 * i + 2]};
                    grow(st.pos, st.pos_state, row3);
                    double g1[1] = {st.gamma[i]};
                    grow(st.gamma, st.gamma_state, g1);
                    double c3[3] = {st.k0[3 * i], st.k0[3 * i + 1], st.k0[3 * i + 2]};
                    grow(st.k0, st.k0_state, c3);
                } else {
                    // Split: shrink the original, spawn a sibling offset along z.
                    st.gamma[i] /= 1.6;
                    double off = 0.5 * st.gamma[i];
                    double row3[3] = {st.pos[3 * i], st.pos[3 * i + 1], st.pos[3 * i + 2] + off};
                    st.pos[3 * i + 2] -= off;
                    grow(st.pos, st.pos_state, row3);
                    double g1[1] = {st.gamma[i]};
                    grow(st.gamma, st.gamma_state, g1);
                    double c3[3] = {st.k0[3 * i], st.k0[3 * i + 1], st.k0[3 * i + 2]};
                    grow(st.k0, st.k0_state, c3);
                }
                double m1[1] = {st.masks.mu[i]};
                grow(st.masks.mu, st.mu_state, m1);
                st.masks.eta.push_back(st.masks.eta[i]);
                st.eta_state.m.insert(st.eta_state.m.end(), kMaxShDegree, 0.0);
                st.eta_state.v.insert(st.eta_state.v.end(), kMaxShDegree, 0.0);
                pos_grad_accum.push_back(0.0);
            }
            std::fill(pos_grad_accum.begin(), pos_grad_accum.end(), 0.0);
            grad_accum_iters = 0;
        }

        if (progress && (iter % 50 == 0 || iter + 1 == cfg.iterations))
            progress({iter, loss.total, loss.l1, st.size()});
    }

    // Final composition with derived bandwidths. Rows whose mask currently
    // fails stay in the scene, paired with the returned mask state; callers
    // prune() or apply_masks() as needed.
    std::vector<int> bandwidths = derive_bandwidth(st.masks);
    SplatScene final_scene;
    final_scene.gaussians.reserve(st.size());
    for (std::size_t i = 0; i < st.size(); ++i) {
        Vec3 p{st.pos[3 * i], st.pos[3 * i + 1], st.pos[3 * i + 2]};
        ImplicitAttrs imp = field.eval_implicit(p, bandwidths[i]);
        Gaussian g;
        g.position = p;
        g.opacity = imp.opacity;
        g.scale = imp.norm_scale * st.gamma[i];
        g.rotation = imp.rotation;
        g.bandwidth = bandwidths[i];
        g.sh[0] = {st.k0[3 * i], st.k0[3 * i + 1], st.k0[3 * i + 2]};
        for (int c = 1; c < sh_coeffs_for_bandwidth(bandwidths[i]); ++c)
            g.sh[c] = imp.sh_rest[static_cast<std::size_t>(c - 1)];
        final_scene.gaussians.push_back(g);
    }
    final_scene.recompute_bounds();

    result.scene = std::move(final_scene);
    result.field = std::move(field);
    result.masks = std::move(st.masks);
    return result;
}

}  // namespace locogs
