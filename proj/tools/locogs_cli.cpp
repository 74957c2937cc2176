// Command-line entry point wiring the pipeline stages: analyze, distill,
// train, densify, encode, decode, render, stats.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "locogs/coherence.hpp"
#include "locogs/container.hpp"
#include "locogs/densify.hpp"
#include "locogs/ply.hpp"
#include "locogs/runconfig.hpp"
#include "locogs/train.hpp"
#include "png_io.hpp"

namespace {

using nlohmann::json;
using namespace locogs;

int log_level() {
    const char* env = std::getenv("LOCOGS_LOG_LEVEL");
    if (!env) return 1;
    std::string v = env;
    if (v == "quiet") return 0;
    if (v == "debug") return 2;
    return 1;
}

Vec3 vec3_of(const json& j) { return {j.at(0), j.at(1), j.at(2)}; }

Camera camera_from_json(const json& j) {
    if (j.contains("rotation")) {
        Camera cam;
        cam.fx = j.at("fx");
        cam.fy = j.at("fy");
        cam.cx = j.at("cx");
        cam.cy = j.at("cy");
        cam.width = j.at("width");
        cam.height = j.at("height");
        for (int i = 0; i < 9; ++i) cam.rotation.m[static_cast<std::size_t>(i)] = j.at("rotation").at(i);
        cam.translation = vec3_of(j.at("translation"));
        return cam;
    }
    Vec3 up = j.contains("up") ? vec3_of(j.at("up")) : Vec3{0, 1, 0};
    return Camera::look_at(vec3_of(j.at("position")), vec3_of(j.at("target")), up,
                           j.value("fov_y_deg", 50.0), j.at("width"), j.at("height"));
}

std::vector<Camera> cameras_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open camera file " + path);
    json j = json::parse(in);
    std::vector<Camera> cams;
    if (j.is_array())
        for (const auto& e : j) cams.push_back(camera_from_json(e));
    else
        cams.push_back(camera_from_json(j));
    return cams;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

RunConfig load_run_config(const std::string& config_path, const std::string& preset) {
    RunConfig cfg = preset.empty() ? RunConfig{} : RunConfig::preset(preset);
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw std::runtime_error("cannot open config " + config_path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        cfg = run_config_from_json(text, cfg);
    }
    return cfg;
}

ProgressFn progress_logger(const std::string& stage) {
    if (log_level() < 1) return {};
    return [stage](const TrainProgress& p) {
        json line{{"stage", stage},
                  {"iteration", p.iteration},
                  {"loss", p.loss},
                  {"l1", p.l1},
                  {"gaussians", p.gaussian_count}};
        std::cout << line.dump() << "\n";
    };
}

DensityField density_by_name(const std::string& name) {
    if (name == "slab") return DensityField::constant_slab(1.8, 2.2, 40.0, {0.7, 0.5, 0.3});
    if (name == "shell") return DensityField::sphere_shell({0, 0, 2}, 0.8, 0.15, 60.0, {0.4, 0.6, 0.8});
    if (name == "gradient") return DensityField::axis_gradient(1.5);
    throw std::runtime_error("unknown density preset: " + name);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"locogs: locality-aware gaussian-splat compression toolkit"};
    app.require_subcommand(1);

    if (argc <= 1) {
        std::cerr << app.help() << std::flush;
        return 2;
    }

    std::string config_path, preset;
    app.add_option("--config", config_path, "JSON config file")->capture_default_str();
    app.add_option("--preset", preset, "variant preset: base | small");
    int threads = 1;
    app.add_option("--threads", threads, "rendering threads (1 = fully sequential)");

    // analyze
    auto* analyze = app.add_subcommand("analyze", "local-coherence report for a scene");
    std::string an_input, an_json, an_csv;
    std::vector<double> an_thresholds;
    std::size_t an_pairs = 10000;
    uint64_t an_seed = 0;
    int an_bins = 32;
    analyze->add_option("scene", an_input, "input splat PLY")->required();
    analyze->add_option("--out", an_json, "JSON report path (default: stdout)");
    analyze->add_option("--csv", an_csv, "CSV report path");
    analyze->add_option("--thresholds", an_thresholds,
                        "squared contracted-distance bucket bounds (increasing)");
    analyze->add_option("--pairs", an_pairs, "pair sample cap per bucket");
    analyze->add_option("--seed", an_seed, "sampling seed");
    analyze->add_option("--bins", an_bins, "histogram bins");

    // distill
    auto* distill_cmd = app.add_subcommand("distill", "fit the neural field to a scene");
    std::string di_input, di_field_out, di_masks_out, di_config_out;
    int di_iterations = -1;
    uint64_t di_seed = UINT64_MAX;
    distill_cmd->add_option("scene", di_input, "input splat PLY")->required();
    distill_cmd->add_option("--out-field", di_field_out, "field checkpoint output")->required();
    distill_cmd->add_option("--out-masks", di_masks_out, "mask state output");
    distill_cmd->add_option("--out-config", di_config_out, "resolved config output");
    distill_cmd->add_option("--iterations", di_iterations, "override iteration count");
    distill_cmd->add_option("--seed", di_seed, "override seed");

    // train
    auto* train_cmd = app.add_subcommand("train", "toy end-to-end optimization");
    std::string tr_target, tr_cameras, tr_init, tr_outdir;
    int tr_iterations = -1;
    train_cmd->add_option("--target-scene", tr_target, "scene PLY rendered to training views")
        ->required();
    train_cmd->add_option("--cameras", tr_cameras, "camera JSON (object or array)")->required();
    train_cmd->add_option("--init", tr_init, "initialization PLY (defaults to target)");
    train_cmd->add_option("--out-dir", tr_outdir, "output directory")->required();
    train_cmd->add_option("--iterations", tr_iterations, "override iteration count");

    // densify
    auto* densify_cmd = app.add_subcommand("densify", "dense initialization from a density field");
    std::string de_density = "slab", de_cameras, de_out;
    DenseSampleOptions de_opts;
    uint64_t de_seed = 0;
    densify_cmd->add_option("--density", de_density, "analytic field: slab | shell | gradient");
    densify_cmd->add_option("--cameras", de_cameras, "camera JSON")->required();
    densify_cmd->add_option("--out", de_out, "output point-cloud PLY")->required();
    densify_cmd->add_option("--rays", de_opts.ray_count, "ray budget");
    densify_cmd->add_option("--samples", de_opts.samples_per_ray, "samples per ray");
    densify_cmd->add_option("--near", de_opts.near, "near bound");
    densify_cmd->add_option("--far", de_opts.far, "far bound");
    densify_cmd->add_option("--seed", de_seed, "ray sampling seed");

    // encode / decode / stats
    auto* encode_cmd = app.add_subcommand("encode", "compress a scene into a .locogs container");
    std::string en_input, en_field, en_out;
    encode_cmd->add_option("scene", en_input, "input splat PLY")->required();
    encode_cmd->add_option("--field", en_field, "field checkpoint (omit for explicit-only)");
    encode_cmd->add_option("--out", en_out, "output container")->required();

    auto* decode_cmd = app.add_subcommand("decode", "reconstruct a scene from a container");
    std::string dc_input, dc_out, dc_field_out;
    decode_cmd->add_option("container", dc_input, "input .locogs container")->required();
    decode_cmd->add_option("--out", dc_out, "output splat PLY")->required();
    decode_cmd->add_option("--out-field", dc_field_out, "write the decoded field checkpoint");

    auto* stats_cmd = app.add_subcommand("stats", "per-stream storage of a container");
    std::string st_input;
    stats_cmd->add_option("container", st_input, "input .locogs container")->required();

    // render
    auto* render_cmd = app.add_subcommand("render", "render a scene to PNG");
    std::string re_input, re_camera, re_out, re_compare;
    std::vector<double> re_bg{0, 0, 0};
    render_cmd->add_option("scene", re_input, "input splat PLY")->required();
    render_cmd->add_option("--camera", re_camera, "camera JSON")->required();
    render_cmd->add_option("--out", re_out, "output PNG")->required();
    render_cmd->add_option("--background", re_bg, "background RGB")->expected(3);
    render_cmd->add_option("--compare", re_compare,
                           "second scene PLY; prints PSNR/SSIM between renders as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        RunConfig cfg = load_run_config(config_path, preset);
        cfg.threads = threads;

        if (*analyze) {
            SplatScene scene = load_ply(an_input);
            std::vector<double> thresholds =
                an_thresholds.empty() ? default_coherence_thresholds() : an_thresholds;
            CoherenceReport report = coherence_report(scene, thresholds, an_pairs, an_seed, an_bins);
            if (an_json.empty()) std::cout << report.to_json() << "\n";
            else write_text(an_json, report.to_json());
            if (!an_csv.empty()) write_text(an_csv, report.to_csv());
        } else if (*distill_cmd) {
            SplatScene scene = load_ply(di_input);
            if (di_iterations >= 0) cfg.train.iterations = di_iterations;
            if (di_seed != UINT64_MAX) cfg.train.seed = di_seed;
            HashGridField field(cfg.field, cfg.train.seed);
            MaskState masks = MaskState::make(scene.size());
            masks.tau = cfg.train.tau;
            masks.tau_sh = cfg.train.tau_sh;
            DistillResult result = distill(scene, field, masks, cfg.train, progress_logger("distill"));
            field.save_checkpoint(di_field_out);
            if (!di_masks_out.empty()) masks.save(di_masks_out);
            if (!di_config_out.empty()) write_text(di_config_out, run_config_to_json(cfg));
            json summary{{"stage", "distill"}, {"rmse", result.rmse}};
            std::cout << summary.dump() << "\n";
        } else if (*train_cmd) {
            SplatScene target_scene = load_ply(tr_target);
            SplatScene init = tr_init.empty() ? target_scene : load_ply(tr_init);
            if (tr_iterations >= 0) cfg.train.iterations = tr_iterations;
            std::vector<std::pair<RenderBuffer, Camera>> views;
            RenderOptions ropts;
            ropts.threads = cfg.threads;
            for (const Camera& cam : cameras_from_file(tr_cameras))
                views.emplace_back(render(target_scene, cam, ropts), cam);
            TrainResult result =
                train_e2e(views, init, cfg.field, cfg.train, progress_logger("train"));
            std::filesystem::create_directories(tr_outdir);
            save_ply(result.scene, tr_outdir + "/scene.ply");
            result.field.save_checkpoint(tr_outdir + "/field.lcfd");
            result.masks.save(tr_outdir + "/masks.lcms");
            write_text(tr_outdir + "/config.json", run_config_to_json(cfg));
            json summary{{"stage", "train"},
                         {"final_l1", result.l1_history.empty() ? 0.0 : result.l1_history.back()},
                         {"gaussians", result.scene.size()}};
            std::cout << summary.dump() << "\n";
        } else if (*densify_cmd) {
            auto points =
                sample_dense_points(density_by_name(de_density), cameras_from_file(de_cameras),
                                    de_opts, de_seed);
            save_ply(dense_points_to_scene(points), de_out);
            json summary{{"stage", "densify"}, {"points", points.size()}};
            std::cout << summary.dump() << "\n";
        } else if (*encode_cmd) {
            SplatScene scene = load_ply(en_input);
            std::optional<HashGridField> field;
            if (!en_field.empty()) field = HashGridField::load_checkpoint(en_field);
            CompressedScene c = encode_scene(scene, field ? &*field : nullptr, cfg.encode);
            c.save(en_out);
            ContainerStats stats = container_stats(c);
            std::cout << stats.to_json() << "\n";
        } else if (*decode_cmd) {
            CompressedScene c = CompressedScene::load(dc_input);
            DecodedScene dec = decode_scene(c);
            save_ply(dec.scene, dc_out);
            if (!dc_field_out.empty()) {
                if (!dec.field) throw std::runtime_error("container has no field to write");
                dec.field->save_checkpoint(dc_field_out);
            }
            json summary{{"stage", "decode"}, {"gaussians", dec.scene.size()}};
            std::cout << summary.dump() << "\n";
        } else if (*stats_cmd) {
            std::cout << container_stats(CompressedScene::load(st_input)).to_json() << "\n";
        } else if (*render_cmd) {
            SplatScene scene = load_ply(re_input);
            Camera cam = cameras_from_file(re_camera).front();
            RenderOptions ropts;
            ropts.background = {re_bg[0], re_bg[1], re_bg[2]};
            ropts.threads = cfg.threads;
            RenderBuffer img = render(scene, cam, ropts);
            save_png(img.to_image(), re_out);
            if (!re_compare.empty()) {
                RenderBuffer other = render(load_ply(re_compare), cam, ropts);
                double p = psnr(img, other);
                json metrics{{"psnr_db", std::isinf(p) ? json("inf") : json(p)},
                             {"ssim", ssim(img, other)}};
                std::cout << metrics.dump() << "\n";
            }
        }
    } catch (const std::exception& e) {
        json err{{"error", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}
