#pragma once

// Finite-difference gradient verification. The loss closure rebuilds the
// graph from the current parameter values on every call, so perturbing a
// parameter in place and re-evaluating yields the perturbed loss. All
// arithmetic runs in double; central differences use step h.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "depthmatch/common.hpp"
#include "depthmatch/tensor.hpp"

namespace dm {

struct GradCheckResult {
    bool pass = true;
    double max_rel_err = 0.0;        // relative error at the worst entry
    std::int64_t entries_checked = 0;
    std::string worst_site;          // "name[i]" of the worst entry
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

struct GradCheckOptions {
    // central differences in double: truncation ~h^2, cancellation ~eps/h,
    // so 1e-4 leaves both far below the tolerances
    double h = 1e-4;
    double rel_tol = 1e-4;
    double abs_tol = 1e-8;
    // per-parameter cap on checked entries; <= 0 checks every entry
    std::int64_t max_entries_per_param = 0;
    std::uint64_t sample_seed = 0x9d2c5680u;
};

// params: named leaf tensors the loss closure reads. Their grads are reset,
// the loss is built once for the analytic pass, then entries are perturbed
// one at a time for the numeric pass.
inline GradCheckResult grad_check(std::vector<std::pair<std::string, Tensor64>>& params,
                                  const std::function<Tensor64()>& loss_fn,
                                  const GradCheckOptions& opt = {}) {
    for (auto& [name, p] : params) {
        if (!p.requires_grad()) fail("grad_check: parameter '" + name + "' does not require grad");
        p.zero_grad();
    }
    Tensor64 loss = loss_fn();
    loss.backward();

    GradCheckResult res;
    Rng rng(opt.sample_seed);
    for (auto& [name, p] : params) {
        const std::int64_t n = p.numel();
        std::vector<std::int64_t> picks;
        if (opt.max_entries_per_param > 0 && n > opt.max_entries_per_param) {
            // partial Fisher-Yates draw without replacement
            std::vector<std::int64_t> pool(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) pool[std::size_t(i)] = i;
            for (std::int64_t i = 0; i < opt.max_entries_per_param; ++i) {
                const std::int64_t j = i + std::int64_t(rng.uniform_int(std::uint64_t(n - i)));
                std::swap(pool[std::size_t(i)], pool[std::size_t(j)]);
                picks.push_back(pool[std::size_t(i)]);
            }
        } else {
            for (std::int64_t i = 0; i < n; ++i) picks.push_back(i);
        }

        auto vals = p.values_mut();
        const auto grads = p.grad();
        for (std::int64_t i : picks) {
            const double orig = vals[std::size_t(i)];
            vals[std::size_t(i)] = orig + opt.h;
            const double fp = loss_fn().item();
            vals[std::size_t(i)] = orig - opt.h;
            const double fm = loss_fn().item();
            vals[std::size_t(i)] = orig;

            const double fd = (fp - fm) / (2.0 * opt.h);
            const double a = grads.empty() ? 0.0 : double(grads[std::size_t(i)]);
            const double err = std::abs(a - fd);
            const double scale = std::max(std::abs(a), std::abs(fd));
            const double rel = err / std::max(scale, 1e-12);
            res.entries_checked++;
            if (err > opt.abs_tol + opt.rel_tol * scale) res.pass = false;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_site = strfmt("%s[%lld]", name.c_str(), (long long)i);
                res.worst_analytic = a;
                res.worst_numeric = fd;
            }
        }
    }
    return res;
}

}  // namespace dm
