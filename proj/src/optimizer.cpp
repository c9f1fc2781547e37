#include "depthmatch/optimizer.hpp"

#include <cmath>

namespace dm {

void OptimConfig::validate() const {
    if (base_lr < 0) fail("optimizer config: base_lr must be >= 0");
    if (weight_decay < 0) fail("optimizer config: weight_decay must be >= 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
        fail("optimizer config: betas must be in [0,1)");
    if (eps <= 0) fail("optimizer config: eps must be positive");
    if (poly_power < 0) fail("optimizer config: poly_power must be >= 0");
    if (total_steps < 1) fail("optimizer config: total_steps must be >= 1");
}

double lr_at(const OptimConfig& cfg, std::int64_t step) {
    if (step < 0) step = 0;
    if (step > cfg.total_steps) step = cfg.total_steps;
    const double frac = 1.0 - double(step) / double(cfg.total_steps);
    return cfg.base_lr * std::pow(frac, cfg.poly_power);
}

double group_multiplier(const OptimConfig& cfg, const std::string& param_name) {
    double mult = 1.0;
    std::size_t best_len = 0;
    for (const auto& [prefix, m] : cfg.group_multipliers) {
        if (param_name.rfind(prefix, 0) == 0 && prefix.size() >= best_len) {
            best_len = prefix.size();
            mult = m;
        }
    }
    return mult;
}

AdamW::AdamW(ParamStore<float>& params, OptimConfig cfg) : params_(&params), cfg_(std::move(cfg)) {
    cfg_.validate();
    slots_.reserve(params.size());
    for (const auto& [name, t] : params.items()) {
        Slot s;
        s.name = name;
        s.m.assign(std::size_t(t.numel()), 0.f);
        s.v.assign(std::size_t(t.numel()), 0.f);
        slots_.push_back(std::move(s));
    }
}

void AdamW::step(std::int64_t global_step) {
    update_count_++;
    const double t = double(update_count_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    const double lr_sched = lr_at(cfg_, global_step);

    auto& items = params_->items();
    if (items.size() != slots_.size()) fail("optimizer: parameter set changed after construction");
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto& [name, p] = items[i];
        if (name != slots_[i].name) fail("optimizer: parameter order changed at '" + name + "'");
        if (!p.has_grad()) fail("missing gradient for parameter '" + name + "'");
        const double lr_eff = lr_sched * group_multiplier(cfg_, name);
        auto vals = p.values_mut();
        const auto grads = p.grad();
        auto& m = slots_[i].m;
        auto& v = slots_[i].v;
        for (std::size_t j = 0; j < vals.size(); ++j) {
            const double g = double(grads[j]);
            const double mj = cfg_.beta1 * double(m[j]) + (1.0 - cfg_.beta1) * g;
            const double vj = cfg_.beta2 * double(v[j]) + (1.0 - cfg_.beta2) * g * g;
            m[j] = float(mj);
            v[j] = float(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            const double upd = mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * double(vals[j]);
            vals[j] = float(double(vals[j]) - lr_eff * upd);
        }
    }
}

}  // namespace dm
