#pragma once

// Boundary-strength extraction for the depth-guided boundary loss.
//
// The boundary operator is a 3x3 Sobel pair under the cross-correlation
// convention with reflective padding, followed by per-image division by the
// maximum magnitude so the fixed binarization threshold is meaningful across
// scenes. Numerically flat images (maximum magnitude at the epsilon floor)
// map to all-zero boundaries.
//
// Depth boundaries are hard targets detached from the graph. Prediction
// boundaries binarize through a straight-through threshold so the loss can
// reach the logits.

#include <cstdint>

#include "depthmatch/image.hpp"
#include "depthmatch/tensor.hpp"

namespace dm {

constexpr double kSobelEps = 1e-12;
constexpr double kFlatGuard = 2e-6;  // just above sqrt(kSobelEps)
constexpr double kBoundaryThreshold = 0.1;

enum class BoundarySource { depth, prediction };

template <typename S>
struct BoundaryMapT {
    TensorT<S> soft;       // [B,1,H,W] in [0,1]
    TensorT<S> binarized;  // [B,1,H,W] in {0,1}
    S threshold = S(kBoundaryThreshold);
    BoundarySource source = BoundarySource::depth;
};

// Unnormalized gradient magnitude sqrt(Gx^2 + Gy^2 + eps), channels treated
// independently. [B,C,H,W] -> [B,C,H,W].
template <typename S>
TensorT<S> sobel_raw(const TensorT<S>& x) {
    if (x.ndim() != 4) fail("sobel_raw: expected [B,C,H,W], got " + shape_str(x.shape()));
    const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H < 2 || W < 2) fail("sobel_raw: image too small for reflective padding");
    static const std::vector<double> kv = {
        // Gx
        -1, 0, 1, -2, 0, 2, -1, 0, 1,
        // Gy
        -1, -2, -1, 0, 0, 0, 1, 2, 1};
    std::vector<S> kd(kv.size());
    for (std::size_t i = 0; i < kv.size(); ++i) kd[i] = S(kv[i]);
    TensorT<S> kernel = TensorT<S>::from_data({2, 1, 3, 3}, std::move(kd));

    TensorT<S> flat = reshape(x, {B * C, 1, H, W});
    TensorT<S> g = conv2d(reflect_pad2d(flat, 1), kernel, 1, 0);  // [B*C,2,H,W]
    TensorT<S> gx = slice(g, 1, 0, 1);
    TensorT<S> gy = slice(g, 1, 1, 2);
    TensorT<S> mag = sqrt_t(add_scalar(add(mul(gx, gx), mul(gy, gy)), S(kSobelEps)));
    return reshape(mag, {B, C, H, W});
}

// Divides by the per-image maximum (gradient flows through the division for
// non-flat images); images whose maximum sits at the epsilon floor yield
// zeros with zero gradient.
template <typename S>
TensorT<S> normalize_per_image(const TensorT<S>& g) {
    TensorT<S> m = reduce_max_axis(g, 3, true);
    m = reduce_max_axis(m, 2, true);
    m = reduce_max_axis(m, 1, true);  // [B,1,1,1]
    const std::int64_t Bn = m.numel();
    std::vector<S> mask(static_cast<std::size_t>(Bn)), bump(static_cast<std::size_t>(Bn));
    for (std::int64_t b = 0; b < Bn; ++b) {
        const bool flat = double(m.value_at(b)) <= kFlatGuard;
        mask[std::size_t(b)] = flat ? S(0) : S(1);
        bump[std::size_t(b)] = flat ? S(1) : S(0);
    }
    TensorT<S> mask_t = TensorT<S>::from_data(m.shape(), std::move(mask));
    TensorT<S> bump_t = TensorT<S>::from_data(m.shape(), std::move(bump));
    return mul(div(g, add(m, bump_t)), mask_t);
}

// Single-channel boundary strength in [0,1]. [B,1,H,W] -> [B,1,H,W].
template <typename S>
TensorT<S> sobel_magnitude(const TensorT<S>& x) {
    if (x.ndim() != 4 || x.dim(1) != 1)
        fail("sobel_magnitude: expected [B,1,H,W], got " + shape_str(x.shape()));
    return normalize_per_image(sobel_raw(x));
}

template <typename S>
BoundaryMapT<S> boundary_from_depth(const TensorT<S>& depth, S threshold = S(kBoundaryThreshold)) {
    BoundaryMapT<S> b;
    b.source = BoundarySource::depth;
    b.threshold = threshold;
    b.soft = sobel_magnitude(detach(depth));
    std::vector<S> hard(std::size_t(b.soft.numel()));
    for (std::int64_t i = 0; i < b.soft.numel(); ++i)
        hard[std::size_t(i)] = b.soft.value_at(i) >= threshold ? S(1) : S(0);
    b.binarized = TensorT<S>::from_data(b.soft.shape(), std::move(hard));
    return b;
}

// Per-class raw magnitudes, max over classes, then one per-image
// normalization; binarized through the straight-through threshold.
template <typename S>
BoundaryMapT<S> boundary_from_prediction(const TensorT<S>& probs,
                                         S threshold = S(kBoundaryThreshold)) {
    if (probs.ndim() != 4) fail("boundary_from_prediction: expected [B,K,H,W]");
    BoundaryMapT<S> b;
    b.source = BoundarySource::prediction;
    b.threshold = threshold;
    TensorT<S> raw = sobel_raw(probs);                     // [B,K,H,W]
    TensorT<S> maxed = reduce_max_axis(raw, 1, true);      // [B,1,H,W]
    b.soft = normalize_per_image(maxed);
    b.binarized = ste_threshold(b.soft, threshold);
    return b;
}

// Evaluation-only variant operating on a hard class map: the map is expanded
// to one-hot planes and treated like a prediction. Nothing enters the graph.
template <typename S>
BoundaryMapT<S> boundary_from_class_map(const ImageI& pred, int num_classes,
                                        S threshold = S(kBoundaryThreshold)) {
    if (num_classes < 2) fail("boundary_from_class_map: need >= 2 classes");
    const std::int64_t H = pred.h, W = pred.w, K = num_classes;
    std::vector<S> oh(std::size_t(K * H * W), S(0));
    for (std::int64_t p = 0; p < H * W; ++p) {
        const std::int32_t c = pred.v[std::size_t(p)];
        if (c < 0 || c >= K)
            fail(strfmt("boundary_from_class_map: class id %d out of range", int(c)));
        oh[std::size_t(c * H * W + p)] = S(1);
    }
    TensorT<S> t = TensorT<S>::from_data({1, K, H, W}, std::move(oh));
    BoundaryMapT<S> b = boundary_from_prediction(t, threshold);
    b.source = BoundarySource::prediction;
    return b;
}

}  // namespace dm
