#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "erft/degrade.hpp"
#include "erft/feature_tailor.hpp"
#include "erft/losses.hpp"
#include "erft/patch_engine.hpp"

namespace erft {

// Every tunable of the pipeline, with the documented defaults. Loaded from
// line-based `key=value` files (comments start with '#'); unknown keys are
// rejected. print_config() emits the fully resolved set; feeding that text
// back reproduces the run.
struct RunConfig {
    int ratio = 4;
    int patch = 64;
    int rim = 4;
    int train_patches = 8; // M
    int batch = 32;        // B
    int epochs = 10;
    std::uint64_t seed = 1;
    float lr = 1e-4f;
    float weight_decay = 1e-5f;
    float eta_spectral = 1.0f;
    float eta_spatial = 1.0f;
    float eta_consistency = 0.1f;
    float mtf_gain_ms = kDefaultMsGain;
    float mtf_gain_pan = kDefaultPanGain;
    int feature_width = 32; // S
    int blocks = 4;         // k
    std::string init_mode = "he"; // he | zero_first
    float ft_init_gain = 0.1f;
    int workers = 0; // 0: ERFT_WORKERS env, else hardware concurrency
    int pretrain_epochs = 8;
    float pretrain_lr = 1e-3f;
    int pretrain_batch = 8;
    int metric_window = 32;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
void apply_override(RunConfig& cfg, const std::string& key_equals_value);
std::string print_config(const RunConfig& cfg);

int resolve_workers(const RunConfig& cfg);
FtInit init_mode_of(const RunConfig& cfg);
LossWeights loss_weights_of(const RunConfig& cfg);
AdaptConfig adapt_config_of(const RunConfig& cfg);
MtfKernel ms_kernel_of(const RunConfig& cfg, int bands);
MtfKernel pan_kernel_of(const RunConfig& cfg);

// Dataset manifest: one scene per line, tab-separated
//   id  split(train|test)  gt  pan  lrms     (paths relative to the dataset dir)
struct SceneEntry {
    std::string id;
    std::string split;
    std::string gt;
    std::string pan;
    std::string lrms;
};

void write_manifest(const std::filesystem::path& dir, const std::vector<SceneEntry>& entries);
std::vector<SceneEntry> read_manifest(const std::filesystem::path& dir);

} // namespace erft
