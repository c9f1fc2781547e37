#pragma once

// Training objectives: supervised cross-entropy, confidence-gated
// pseudo-label cross-entropy, depth-guided boundary loss, the per-epoch decay
// schedule, and the weighted total.
//
// Both cross-entropy losses normalize inside each image by that image's
// contributing pixel count and then average with 1/B over the batch; images
// with no contributing pixels add exactly zero. This is realized by a
// constant weight tensor of per-pixel coefficients multiplied against
// log-softmax, which keeps ignored pixels at exactly zero gradient.

#include <cmath>
#include <cstdint>
#include <vector>

#include "depthmatch/boundary.hpp"
#include "depthmatch/image.hpp"
#include "depthmatch/tensor.hpp"

namespace dm {

constexpr std::int32_t kIgnoreLabel = 255;

template <typename S>
struct LossResult {
    TensorT<S> loss;
    double contributing_fraction = 0.0;  // contributing pixels / all pixels
    bool any_valid = false;              // false = every pixel was excluded
};

namespace detail_loss {

// Shared weighted-CE core. include(b, p) decides contribution and
// target(b, p) gives the class index for contributing pixels.
template <typename S, typename IncludeF, typename TargetF>
LossResult<S> weighted_ce(const TensorT<S>& logits, IncludeF&& include, TargetF&& target) {
    if (logits.ndim() != 4) fail("cross-entropy: logits must be [B,K,H,W]");
    const std::int64_t B = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    const std::int64_t HW = H * W;
    std::vector<S> wts(std::size_t(B * K * HW), S(0));
    std::int64_t contributing = 0;
    bool any = false;
    for (std::int64_t b = 0; b < B; ++b) {
        std::int64_t n_valid = 0;
        for (std::int64_t p = 0; p < HW; ++p)
            if (include(b, p)) n_valid++;
        if (n_valid == 0) continue;
        any = true;
        contributing += n_valid;
        const S coef = S(1.0 / (double(B) * double(n_valid)));
        for (std::int64_t p = 0; p < HW; ++p) {
            if (!include(b, p)) continue;
            const std::int64_t k = target(b, p);
            if (k < 0 || k >= K)
                fail(strfmt("cross-entropy: class id %lld out of range for %lld classes",
                            (long long)k, (long long)K));
            wts[std::size_t((b * K + k) * HW + p)] = coef;
        }
    }
    TensorT<S> wt = TensorT<S>::from_data(logits.shape(), std::move(wts));
    LossResult<S> r;
    r.loss = neg(reduce_sum(mul(log_softmax(logits, 1), wt)));
    r.contributing_fraction = double(contributing) / double(B * HW);
    r.any_valid = any;
    return r;
}

}  // namespace detail_loss

// Cross-entropy against ground-truth labels; 255 marks ignored pixels.
template <typename S>
LossResult<S> supervised_loss(const TensorT<S>& logits, const std::vector<ImageI>& labels) {
    const std::int64_t B = logits.dim(0), H = logits.dim(2), W = logits.dim(3);
    if (std::int64_t(labels.size()) != B) fail("supervised_loss: batch size mismatch");
    for (const auto& l : labels)
        if (l.h != H || l.w != W) fail("supervised_loss: label size mismatch");
    return detail_loss::weighted_ce(
        logits, [&](std::int64_t b, std::int64_t p) { return labels[std::size_t(b)].v[std::size_t(p)] != kIgnoreLabel; },
        [&](std::int64_t b, std::int64_t p) { return std::int64_t(labels[std::size_t(b)].v[std::size_t(p)]); });
}

// Teacher output converted to hard targets with a confidence gate.
struct PseudoLabelBatch {
    std::int64_t B = 0, H = 0, W = 0;
    double tau = 0.0;
    std::vector<std::int32_t> labels;     // argmax class per pixel
    std::vector<float> confidence;        // max probability per pixel
    std::vector<std::uint8_t> valid;      // confidence >= tau
    double valid_fraction = 0.0;

    std::size_t at(std::int64_t b, std::int64_t p) const { return std::size_t(b * H * W + p); }
};

// probs [B,K,H,W] from the teacher; values only, nothing enters the graph.
template <typename S>
PseudoLabelBatch make_pseudo_label(const TensorT<S>& probs, double tau) {
    if (probs.ndim() != 4) fail("make_pseudo_label: probs must be [B,K,H,W]");
    PseudoLabelBatch pl;
    pl.B = probs.dim(0);
    pl.H = probs.dim(2);
    pl.W = probs.dim(3);
    pl.tau = tau;
    const std::int64_t K = probs.dim(1), HW = pl.H * pl.W;
    pl.labels.resize(std::size_t(pl.B * HW));
    pl.confidence.resize(std::size_t(pl.B * HW));
    pl.valid.resize(std::size_t(pl.B * HW));
    std::int64_t n_valid = 0;
    const auto v = probs.values();
    for (std::int64_t b = 0; b < pl.B; ++b)
        for (std::int64_t p = 0; p < HW; ++p) {
            S best = v[std::size_t(b * K * HW + p)];
            std::int64_t bi = 0;
            for (std::int64_t k = 1; k < K; ++k) {
                const S val = v[std::size_t((b * K + k) * HW + p)];
                if (val > best) {
                    best = val;
                    bi = k;
                }
            }
            const std::size_t i = pl.at(b, p);
            pl.labels[i] = std::int32_t(bi);
            pl.confidence[i] = float(best);
            pl.valid[i] = double(best) >= tau ? 1 : 0;
            n_valid += pl.valid[i];
        }
    pl.valid_fraction = double(n_valid) / double(pl.B * HW);
    return pl;
}

// Cross-entropy of the strong-view logits against gated pseudo-labels.
template <typename S>
LossResult<S> unsupervised_loss(const TensorT<S>& logits, const PseudoLabelBatch& pl) {
    if (logits.dim(0) != pl.B || logits.dim(2) != pl.H || logits.dim(3) != pl.W)
        fail("unsupervised_loss: logits do not match pseudo-label batch");
    return detail_loss::weighted_ce(
        logits, [&](std::int64_t b, std::int64_t p) { return pl.valid[pl.at(b, p)] != 0; },
        [&](std::int64_t b, std::int64_t p) { return std::int64_t(pl.labels[pl.at(b, p)]); });
}

// Mean over all pixels of y_p * (y_p - y_d)^2. Binarized values by default;
// soft mode uses the soft fields directly (fully differentiable variant).
template <typename S>
TensorT<S> dgbl_loss(const BoundaryMapT<S>& pred, const BoundaryMapT<S>& dep,
                     bool soft_mode = false) {
    const TensorT<S>& yp = soft_mode ? pred.soft : pred.binarized;
    const TensorT<S>& yd = soft_mode ? dep.soft : dep.binarized;
    if (yp.shape() != yd.shape())
        fail("dgbl: boundary map sizes differ, " + shape_str(yp.shape()) + " vs " +
             shape_str(yd.shape()));
    TensorT<S> d = sub(yp, yd);
    return reduce_mean(mul(yp, mul(d, d)));
}

struct LossSchedule {
    double lambda_u = 1.0;
    int t_max = 1;
    int current_t = 1;  // 1-based epoch

    void validate() const {
        if (lambda_u < 0) fail("loss schedule: lambda_u must be >= 0");
        if (t_max < 1) fail("loss schedule: t_max must be >= 1");
        if (current_t < 1 || current_t > t_max)
            fail(strfmt("loss schedule: epoch %d outside [1,%d]", current_t, t_max));
    }
};

// f(t) = 1 - (t-1)/t_max; f(1) = 1, f(t_max) = 1/t_max.
inline double schedule_weight(const LossSchedule& s) {
    s.validate();
    return 1.0 - double(s.current_t - 1) / double(s.t_max);
}

// L_total = L_l + lambda_u * (L_u + f(t) * L_dgb)
template <typename S>
TensorT<S> total_loss(const TensorT<S>& l_sup, const TensorT<S>& l_unsup, const TensorT<S>& l_dgb,
                      const LossSchedule& s) {
    auto check = [](const TensorT<S>& t, const char* name) {
        if (t.numel() != 1) fail(strfmt("total_loss: %s is not a scalar", name));
        if (!std::isfinite(double(t.item()))) fail(strfmt("total_loss: %s is not finite", name));
    };
    check(l_sup, "supervised term");
    check(l_unsup, "unsupervised term");
    check(l_dgb, "boundary term");
    const double f = schedule_weight(s);
    TensorT<S> inner = add(l_unsup, mul_scalar(l_dgb, S(f)));
    return add(l_sup, mul_scalar(inner, S(s.lambda_u)));
}

}  // namespace dm
