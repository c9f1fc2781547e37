#pragma once

// Named finite-difference checks covering every differentiable op plus the
// full network with the composite training objective. Shared by the
// gradcheck CLI subcommand and the acceptance harness. The straight-through
// threshold is excluded here (its forward is a step function); its gradient
// contract is covered by unit tests.

#include <functional>
#include <string>
#include <vector>

#include "depthmatch/boundary.hpp"
#include "depthmatch/gradcheck.hpp"
#include "depthmatch/losses.hpp"
#include "depthmatch/model.hpp"
#include "depthmatch/tensor.hpp"

namespace dm {

struct GradCheckCase {
    std::string name;
    GradCheckResult result;
};

namespace detail_gradcheck {

inline Tensor64 rnd(const Shape& shape, Rng& rng, double lo, double hi) {
    std::vector<double> d(std::size_t(numel_of(shape)));
    for (auto& v : d) v = rng.uniform(lo, hi);
    return Tensor64::from_data(shape, std::move(d), true);
}

inline Tensor64 rnd_signed(const Shape& shape, Rng& rng) {
    std::vector<double> d(std::size_t(numel_of(shape)));
    for (auto& v : d) v = rng.normal(0.0, 1.0);
    return Tensor64::from_data(shape, std::move(d), true);
}

// values bounded away from zero so kinked ops stay differentiable at +-h
inline Tensor64 rnd_away_from_zero(const Shape& shape, Rng& rng) {
    std::vector<double> d(std::size_t(numel_of(shape)));
    for (auto& v : d) v = rng.uniform(0.3, 1.5) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    return Tensor64::from_data(shape, std::move(d), true);
}

// fixed random coefficients turn any tensor into a scalar with varied grads
inline Tensor64 wsum(const Tensor64& t, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> c(std::size_t(t.numel()));
    for (auto& v : c) v = rng.uniform(0.5, 1.5) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    Tensor64 coef = Tensor64::from_data(t.shape(), std::move(c));
    return reduce_sum(mul(t, coef));
}

}  // namespace detail_gradcheck

inline std::vector<GradCheckCase> run_op_gradchecks() {
    using namespace detail_gradcheck;
    std::vector<GradCheckCase> out;
    auto check = [&](const std::string& name, std::vector<std::pair<std::string, Tensor64>> params,
                     const std::function<Tensor64()>& fn) {
        out.push_back({name, grad_check(params, fn)});
    };
    Rng rng(7);

    {
        Tensor64 a = rnd_signed({2, 3, 4}, rng), b = rnd_signed({3, 1}, rng);
        check("add_broadcast", {{"a", a}, {"b", b}}, [=] { return wsum(add(a, b), 11); });
    }
    {
        Tensor64 a = rnd_signed({2, 3}, rng), b = rnd_signed({1, 3}, rng);
        check("sub_broadcast", {{"a", a}, {"b", b}}, [=] { return wsum(sub(a, b), 12); });
    }
    {
        Tensor64 a = rnd_signed({2, 3, 4}, rng), b = rnd_signed({4}, rng);
        check("mul_broadcast", {{"a", a}, {"b", b}}, [=] { return wsum(mul(a, b), 13); });
    }
    {
        Tensor64 a = rnd_signed({3, 4}, rng), b = rnd({3, 4}, rng, 0.5, 2.0);
        check("div", {{"a", a}, {"b", b}}, [=] { return wsum(div(a, b), 14); });
    }
    {
        Tensor64 a = rnd_signed({2, 5}, rng);
        check("scalar_chain", {{"a", a}},
              [=] { return wsum(neg(mul_scalar(add_scalar(a, 0.7), -1.3)), 15); });
    }
    {
        Tensor64 a = rnd_signed({3, 4}, rng), b = rnd_signed({4, 5}, rng);
        check("matmul", {{"a", a}, {"b", b}}, [=] { return wsum(matmul(a, b), 16); });
    }
    {
        Tensor64 a = rnd_signed({2, 3, 4}, rng), b = rnd_signed({2, 4, 3}, rng);
        check("bmm", {{"a", a}, {"b", b}}, [=] { return wsum(bmm(a, b), 17); });
    }
    {
        Tensor64 x = rnd_signed({2, 3, 5, 6}, rng), k = rnd_signed({4, 3, 3, 3}, rng);
        check("conv2d_s1p1", {{"x", x}, {"k", k}}, [=] { return wsum(conv2d(x, k, 1, 1), 18); });
    }
    {
        Tensor64 x = rnd_signed({1, 2, 6, 6}, rng), k = rnd_signed({3, 2, 2, 2}, rng);
        check("conv2d_s2p0", {{"x", x}, {"k", k}}, [=] { return wsum(conv2d(x, k, 2, 0), 19); });
    }
    {
        Tensor64 x = rnd_signed({1, 2, 4, 5}, rng);
        check("reflect_pad", {{"x", x}}, [=] { return wsum(reflect_pad2d(x, 2), 20); });
    }
    {
        Tensor64 x = rnd_away_from_zero({3, 7}, rng);
        check("relu", {{"x", x}}, [=] { return wsum(relu(x), 21); });
    }
    {
        Tensor64 x = rnd({2, 6}, rng, 0.3, 2.0);
        check("sqrt", {{"x", x}}, [=] { return wsum(sqrt_t(x), 22); });
    }
    {
        Tensor64 x = rnd_signed({2, 3, 4}, rng);
        check("softmax", {{"x", x}}, [=] { return wsum(softmax(x, 1), 23); });
    }
    {
        Tensor64 x = rnd_signed({2, 4, 3}, rng);
        check("log_softmax", {{"x", x}}, [=] { return wsum(log_softmax(x, 1), 24); });
    }
    {
        Tensor64 x = rnd_signed({2, 3, 6}, rng);
        Tensor64 g = rnd({6}, rng, 0.7, 1.3), b = rnd_signed({6}, rng);
        check("layer_norm", {{"x", x}, {"gamma", g}, {"beta", b}},
              [=] { return wsum(layer_norm(x, g, b), 25); });
    }
    {
        Tensor64 x = rnd_signed({1, 2, 3, 4}, rng);
        check("bilinear_up", {{"x", x}}, [=] { return wsum(bilinear_resize(x, 5, 7), 26); });
    }
    {
        Tensor64 x = rnd_signed({1, 2, 6, 7}, rng);
        check("bilinear_down", {{"x", x}}, [=] { return wsum(bilinear_resize(x, 3, 4), 27); });
    }
    {
        Tensor64 x = rnd_signed({3, 4}, rng);
        check("reduce_sum", {{"x", x}}, [=] { return reduce_sum(mul(x, x)); });
    }
    {
        Tensor64 x = rnd_signed({3, 4}, rng);
        check("reduce_mean", {{"x", x}}, [=] { return reduce_mean(mul(x, mul(x, x))); });
    }
    {
        Tensor64 x = rnd_signed({2, 3, 4}, rng);
        check("reduce_sum_axis", {{"x", x}}, [=] { return wsum(reduce_sum_axis(x, 1), 28); });
    }
    {
        Tensor64 x = rnd_signed({2, 3, 4}, rng);
        check("reduce_mean_axis", {{"x", x}}, [=] { return wsum(reduce_mean_axis(x, 2), 29); });
    }
    {
        Tensor64 x = rnd_signed({2, 3, 4}, rng);
        check("reduce_max_axis", {{"x", x}}, [=] { return wsum(reduce_max_axis(x, 1), 30); });
    }
    {
        Tensor64 x = rnd_signed({2, 6}, rng);
        check("reshape", {{"x", x}}, [=] { return wsum(reshape(x, {3, 4}), 31); });
    }
    {
        Tensor64 x = rnd_signed({2, 3, 4}, rng);
        check("permute", {{"x", x}}, [=] { return wsum(permute(x, {2, 0, 1}), 32); });
    }
    {
        Tensor64 a = rnd_signed({2, 2, 3}, rng), b = rnd_signed({2, 1, 3}, rng);
        check("concat", {{"a", a}, {"b", b}},
              [=] { return wsum(concat(std::vector<Tensor64>{a, b}, 1), 33); });
    }
    {
        Tensor64 x = rnd_signed({2, 5, 4}, rng);
        check("slice", {{"x", x}}, [=] { return wsum(slice(x, 1, 1, 4), 34); });
    }
    {
        Tensor64 x = rnd({1, 1, 6, 7}, rng, 0.0, 1.0);
        check("sobel_magnitude", {{"x", x}}, [=] { return wsum(sobel_magnitude(x), 35); });
    }
    {
        Tensor64 x = rnd({2, 3, 4, 5}, rng, 0.1, 2.0);
        check("normalize_per_image", {{"x", x}}, [=] { return wsum(normalize_per_image(x), 36); });
    }
    return out;
}

// 32x32 inputs, 3 classes: one labeled and one unlabeled view through the
// network, combined exactly like a training step (soft boundary terms so the
// objective is differentiable end to end).
inline GradCheckCase run_full_model_gradcheck() {
    using namespace detail_gradcheck;
    ModelConfig mc;
    mc.patch_size = 8;
    mc.embed_dim = 8;
    mc.encoder_blocks = 2;
    mc.num_heads = 4;
    mc.num_classes = 3;
    mc.pos_grid = 4;
    mc.use_lspi = true;
    mc.lspi_stages = 1;
    SegModelT<double> model(mc, 123);

    Rng rng(41);
    // the restoring map starts at zero, which silences gradients of the maps
    // feeding it; nudge it off zero so every injection parameter is exercised
    for (auto& [name, t] : model.params().items())
        if (name.find("wf.weight") != std::string::npos)
            for (auto& v : t.values_mut()) v = rng.normal(0.0, 0.1);

    const std::int64_t H = 32, W = 32;
    Tensor64 rgb_l = rnd({1, 3, H, W}, rng, 0.0, 1.0);
    rgb_l = detach(rgb_l);
    Tensor64 dep_l = detach(rnd({1, 1, H, W}, rng, 0.0, 1.0));
    Tensor64 rgb_u = detach(rnd({1, 3, H, W}, rng, 0.0, 1.0));
    Tensor64 dep_u = detach(rnd({1, 1, H, W}, rng, 0.0, 1.0));

    std::vector<ImageI> labels(1, ImageI(H, W));
    for (auto& v : labels[0].v)
        v = rng.bernoulli(0.1) ? 255 : std::int32_t(rng.uniform_int(3));

    // fixed teacher output: per-pixel probabilities that sum to one
    std::vector<double> pdata(std::size_t(3 * H * W));
    for (std::int64_t p = 0; p < H * W; ++p) {
        double u[3], s = 0;
        for (double& x : u) {
            x = rng.uniform(0.05, 1.0);
            s += x;
        }
        for (int k = 0; k < 3; ++k) pdata[std::size_t(k * H * W + p)] = u[k] / s;
    }
    Tensor64 tprobs = Tensor64::from_data({1, 3, H, W}, std::move(pdata));
    const PseudoLabelBatch pl = make_pseudo_label(tprobs, 0.6);

    LossSchedule sched;
    sched.lambda_u = 1.0;
    sched.t_max = 10;
    sched.current_t = 3;

    auto loss_fn = [&, labels, pl, sched]() {
        Tensor64 logits_l = model.forward(rgb_l, dep_l);
        Tensor64 l_sup = supervised_loss(logits_l, labels).loss;
        Tensor64 logits_u = model.forward(rgb_u, dep_u);
        Tensor64 l_unsup = unsupervised_loss(logits_u, pl).loss;
        BoundaryMapT<double> bm_p = boundary_from_prediction(softmax(logits_u, 1));
        BoundaryMapT<double> bm_d = boundary_from_depth(dep_u);
        Tensor64 l_dgb = dgbl_loss(bm_p, bm_d, /*soft_mode=*/true);
        return total_loss(l_sup, l_unsup, l_dgb, sched);
    };

    std::vector<std::pair<std::string, Tensor64>> params;
    for (auto& [name, t] : model.params().items()) params.emplace_back(name, t);

    GradCheckOptions opt;
    // an untrained net has relu preactivations near zero; a smaller step keeps
    // the +-h interval from straddling those kinks (numeric converges to the
    // analytic value as h shrinks, so the gradient itself is sound)
    opt.h = 1e-5;
    opt.rel_tol = 1e-3;
    opt.max_entries_per_param = 3;
    opt.sample_seed = 99;
    return {"full_model_composite", grad_check(params, loss_fn, opt)};
}

}  // namespace dm
