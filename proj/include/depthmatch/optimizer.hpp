#pragma once

// Adam with decoupled weight decay, polynomial learning-rate decay over the
// whole run, and per-group learning-rate multipliers chosen by longest
// matching parameter-name prefix.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "depthmatch/model.hpp"

namespace dm {

struct OptimConfig {
    double base_lr = 2e-4;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double poly_power = 0.9;
    std::int64_t total_steps = 1;
    // prefix -> multiplier; unmatched parameters use 1.0
    std::vector<std::pair<std::string, double>> group_multipliers;

    void validate() const;
};

double lr_at(const OptimConfig& cfg, std::int64_t step);
double group_multiplier(const OptimConfig& cfg, const std::string& param_name);

class AdamW {
public:
    AdamW(ParamStore<float>& params, OptimConfig cfg);

    // global_step indexes the decay schedule (0-based); every parameter must
    // have a gradient array (zero_grads before backward guarantees this).
    void step(std::int64_t global_step);

    std::int64_t update_count() const { return update_count_; }
    void set_update_count(std::int64_t c) { update_count_ = c; }

    struct Slot {
        std::string name;
        std::vector<float> m, v;
    };
    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }
    const OptimConfig& config() const { return cfg_; }

private:
    ParamStore<float>* params_;
    OptimConfig cfg_;
    std::vector<Slot> slots_;
    std::int64_t update_count_ = 0;  // bias-correction time index
};

}  // namespace dm
