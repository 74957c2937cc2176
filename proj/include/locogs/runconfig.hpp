// Run configuration shared by the CLI subcommands: variant presets, JSON
// config files, and the knobs of each pipeline stage in one place.
#pragma once

#include <string>

#include "locogs/container.hpp"
#include "locogs/field.hpp"
#include "locogs/train.hpp"

namespace locogs {

struct RunConfig {
    HashGridConfig field;
    TrainConfig train;
    EncodeOptions encode;
    int threads = 1;

    // "base": 2^19 hash tables, lambda_mask 0.004.
    // "small": 2^17 hash tables, more aggressive pruning (lambda_mask 0.005).
    static RunConfig preset(const std::string& name);
};

// Overlay JSON (object with optional "field"/"train"/"encode"/"threads"/"preset"
// sections) onto a config. Unknown keys are an error.
RunConfig run_config_from_json(const std::string& text, const RunConfig& base = RunConfig{});
std::string run_config_to_json(const RunConfig& cfg);

}  // namespace locogs
