#pragma once

// Line-oriented "key = value" configuration with a strict schema: unknown
// keys, duplicate keys, malformed values, and out-of-range values are all
// errors. The fully resolved config (every key, defaults included, fixed
// order) is reproducible text; its hash guards checkpoint resumption.

#include <cstdint>
#include <filesystem>
#include <string>

#include "depthmatch/data_io.hpp"
#include "depthmatch/model.hpp"
#include "depthmatch/optimizer.hpp"

namespace dm {

struct TrainConfig {
    // pseudo-labeling and loss weighting
    double tau = 0.95;
    double lambda_u = 1.0;
    // CPMA
    double masking_ratio = 0.1;
    int cpma_patch_size = 32;
    bool cpma_on_labeled = false;
    // batching and schedule
    int batch_labeled = 8;
    int batch_unlabeled = 8;
    int epochs = 100;
    double ema_momentum = 0.999;
    // optimizer
    double lr = 2e-4;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double poly_power = 0.9;
    double backbone_lr_multiplier = 2.5e-2;
    // model dims
    int patch_size = 8;
    int embed_dim = 64;
    int encoder_blocks = 4;
    int num_heads = 4;
    int pos_grid = 16;
    // ablation switches
    bool use_lspi = true;
    bool use_cpma = true;
    bool use_dgbl = true;
    bool rgb_only = false;
    bool dgbl_soft_mode = false;
    int lspi_stages = 1;
    // weak/strong augmentation
    double flip_prob = 0.5;
    double scale_min = 0.5;
    double scale_max = 2.0;
    double jitter_prob = 0.8;
    double grayscale_prob = 0.2;
    double blur_prob = 0.5;
    // boundary
    double boundary_threshold = 0.1;
    // misc
    std::uint64_t seed = 42;

    ModelConfig model_config(int num_classes) const;
    OptimConfig optim_config(std::int64_t total_steps) const;
    void validate() const;
};

TrainConfig parse_train_config_text(const std::string& text);
TrainConfig parse_train_config(const std::filesystem::path& path);

// Every key in declaration order; parsing this text reproduces the config.
std::string resolved_config_text(const TrainConfig& cfg);
std::uint64_t config_hash(const TrainConfig& cfg);

SyntheticSceneSpec parse_scene_spec_text(const std::string& text);
SyntheticSceneSpec parse_scene_spec(const std::filesystem::path& path);

}  // namespace dm
