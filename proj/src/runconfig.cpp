#include "locogs/runconfig.hpp"

#include <json.hpp>

namespace locogs {

namespace {

using nlohmann::json;

void parse_field(const json& j, HashGridConfig& cfg) {
    for (auto& [key, value] : j.items()) {
        if (key == "levels") cfg.levels = value;
        else if (key == "min_res") cfg.min_res = value;
        else if (key == "max_res") cfg.max_res = value;
        else if (key == "table_size_log2") cfg.table_size_log2 = value;
        else if (key == "feature_dim") cfg.feature_dim = value;
        else if (key == "opacity_activation") {
            std::string v = value;
            if (v == "sigmoid") cfg.opacity_activation = OpacityActivation::Sigmoid;
            else if (v == "exp_clamped") cfg.opacity_activation = OpacityActivation::ExpClamped;
            else throw TrainError("config: unknown opacity_activation " + v);
        } else throw TrainError("config: unknown field key " + key);
    }
}

void parse_train(const json& j, TrainConfig& cfg) {
    for (auto& [key, value] : j.items()) {
        if (key == "lambda") cfg.lambda = value;
        else if (key == "lambda_mask") cfg.lambda_mask = value;
        else if (key == "lambda_sh_mask") cfg.lambda_sh_mask = value;
        else if (key == "tau") cfg.tau = value;
        else if (key == "tau_sh") cfg.tau_sh = value;
        else if (key == "iterations") cfg.iterations = value;
        else if (key == "warmup_iters") cfg.warmup_iters = value;
        else if (key == "prune_interval") cfg.prune_interval = value;
        else if (key == "prune_start_iter") cfg.prune_start_iter = value;
        else if (key == "densify_enabled") cfg.densify_enabled = value;
        else if (key == "densify_interval") cfg.densify_interval = value;
        else if (key == "densify_grad_threshold") cfg.densify_grad_threshold = value;
        else if (key == "densify_scale_threshold") cfg.densify_scale_threshold = value;
        else if (key == "lr_position") cfg.lr_position = value;
        else if (key == "lr_gamma") cfg.lr_gamma = value;
        else if (key == "lr_color") cfg.lr_color = value;
        else if (key == "lr_mask") cfg.lr_mask = value;
        else if (key == "lr_field_start") cfg.lr_field_start = value;
        else if (key == "lr_field_end") cfg.lr_field_end = value;
        else if (key == "batch_size") cfg.batch_size = value;
        else if (key == "seed") cfg.seed = value;
        else throw TrainError("config: unknown train key " + key);
    }
}

void parse_encode(const json& j, EncodeOptions& cfg) {
    for (auto& [key, value] : j.items()) {
        if (key == "gamma_bits") cfg.gamma_bits = value;
        else if (key == "color_bits") cfg.color_bits = value;
        else if (key == "theta_bits") cfg.theta_bits = value;
        else if (key == "morton_bits") cfg.morton_bits = value;
        else throw TrainError("config: unknown encode key " + key);
    }
}

}  // namespace

RunConfig RunConfig::preset(const std::string& name) {
    RunConfig cfg;
    if (name == "base") {
        cfg.field.table_size_log2 = 19;
        cfg.train.lambda_mask = 0.004;
    } else if (name == "small") {
        cfg.field.table_size_log2 = 17;
        cfg.train.lambda_mask = 0.005;
    } else {
        throw TrainError("unknown preset: " + name);
    }
    return cfg;
}

RunConfig run_config_from_json(const std::string& text, const RunConfig& base) {
    json j = json::parse(text);
    RunConfig cfg = base;
    if (j.contains("preset")) cfg = RunConfig::preset(j["preset"].get<std::string>());
    for (auto& [key, value] : j.items()) {
        if (key == "preset") continue;
        else if (key == "field") parse_field(value, cfg.field);
        else if (key == "train") parse_train(value, cfg.train);
        else if (key == "encode") parse_encode(value, cfg.encode);
        else if (key == "threads") cfg.threads = value;
        else throw TrainError("config: unknown key " + key);
    }
    return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["field"]["levels"] = cfg.field.levels;
    j["field"]["min_res"] = cfg.field.min_res;
    j["field"]["max_res"] = cfg.field.max_res;
    j["field"]["table_size_log2"] = cfg.field.table_size_log2;
    j["field"]["feature_dim"] = cfg.field.feature_dim;
    j["field"]["opacity_activation"] =
        cfg.field.opacity_activation == OpacityActivation::Sigmoid ? "sigmoid" : "exp_clamped";
    j["train"]["lambda"] = cfg.train.lambda;
    j["train"]["lambda_mask"] = cfg.train.lambda_mask;
    j["train"]["lambda_sh_mask"] = cfg.train.lambda_sh_mask;
    j["train"]["tau"] = cfg.train.tau;
    j["train"]["tau_sh"] = cfg.train.tau_sh;
    j["train"]["iterations"] = cfg.train.iterations;
    j["train"]["warmup_iters"] = cfg.train.warmup_iters;
    j["train"]["prune_interval"] = cfg.train.prune_interval;
    j["train"]["prune_start_iter"] = cfg.train.prune_start_iter;
    j["train"]["densify_enabled"] = cfg.train.densify_enabled;
    j["train"]["densify_interval"] = cfg.train.densify_interval;
    j["train"]["densify_grad_threshold"] = cfg.train.densify_grad_threshold;
    j["train"]["densify_scale_threshold"] = cfg.train.densify_scale_threshold;
    j["train"]["lr_position"] = cfg.train.lr_position;
    j["train"]["lr_gamma"] = cfg.train.lr_gamma;
    j["train"]["lr_color"] = cfg.train.lr_color;
    j["train"]["lr_mask"] = cfg.train.lr_mask;
    j["train"]["lr_field_start"] = cfg.train.lr_field_start;
    j["train"]["lr_field_end"] = cfg.train.lr_field_end;
    j["train"]["batch_size"] = cfg.train.batch_size;
    j["train"]["seed"] = cfg.train.seed;
    j["encode"]["gamma_bits"] = cfg.encode.gamma_bits;
    j["encode"]["color_bits"] = cfg.encode.color_bits;
    j["encode"]["theta_bits"] = cfg.encode.theta_bits;
    j["encode"]["morton_bits"] = cfg.encode.morton_bits;
    j["threads"] = cfg.threads;
    return j.dump(2);
}

}  // namespace locogs
