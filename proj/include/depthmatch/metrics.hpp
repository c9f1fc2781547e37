#pragma once

// Confusion-matrix evaluation (pixel accuracy, per-class IoU, mIoU),
// instance-size-weighted IoU, and multi-scale inference.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "depthmatch/image.hpp"
#include "depthmatch/model.hpp"

namespace dm {

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes);

    // truth pixels of 255 are skipped; any other out-of-range id is an error
    void accumulate(const ImageI& pred, const ImageI& truth);
    void merge(const ConfusionMatrix& other);

    int num_classes() const { return K_; }
    std::int64_t count(int truth, int pred) const {
        return counts_[std::size_t(truth * K_ + pred)];
    }
    std::int64_t total() const;
    double pixel_accuracy() const;  // error when empty

    struct IouReport {
        std::vector<double> per_class;   // valid entries only meaningful
        std::vector<bool> has_union;     // false = class absent from pred and truth
        double miou = 0.0;               // mean over classes with nonzero union
    };
    IouReport miou() const;  // error when every class has zero union

    void write_csv(const std::string& path) const;

private:
    int K_;
    std::vector<std::int64_t> counts_;  // rows = truth, cols = predicted
};

// Instance-size-weighted IoU: true positives and false negatives are
// weighted by (class mean instance size / own instance size); false
// positives count unweighted. Two passes: instance sizes first, then the
// weighted tallies. Background (class 0) carries no instances and is
// excluded.
class InstanceIouAccumulator {
public:
    explicit InstanceIouAccumulator(int num_classes);

    // pass 1 over every evaluated image
    void add_sizes(const ImageI& truth, const ImageI& instance, std::int64_t image_index);
    void finalize_sizes();

    // pass 2; requires finalize_sizes() first
    void accumulate(const ImageI& pred, const ImageI& truth, const ImageI& instance,
                    std::int64_t image_index);

    struct Report {
        std::vector<double> per_class;
        std::vector<bool> has_instances;
        double mean = 0.0;  // over classes with instances
    };
    Report report() const;  // error when no class has instances

private:
    int K_;
    bool finalized_ = false;
    // (image_index, instance_id, class) -> pixel count
    std::map<std::tuple<std::int64_t, std::int32_t, std::int32_t>, std::int64_t> sizes_;
    std::vector<double> mean_size_;  // per class
    std::vector<std::int64_t> inst_count_;
    std::vector<double> itp_, ifn_;
    std::vector<std::int64_t> fp_;
};

// Resizes the input by each factor (snapped to the nearest patch-size
// multiple), runs the model, resizes logits back, averages in f64, argmaxes.
// A factor scaling below one patch is an error.
template <typename S>
ImageI multi_scale_predict(const SegModelT<S>& model, const ImageF& rgb, const ImageF& depth,
                           const std::vector<double>& factors) {
    if (factors.empty()) fail("multi_scale_predict: factors must be non-empty");
    const std::int64_t H = rgb.h, W = rgb.w;
    const std::int64_t pe = model.config().patch_size;
    const int K = model.config().num_classes;
    std::vector<double> acc(std::size_t(K * H * W), 0.0);

    for (double f : factors) {
        if (!(f > 0)) fail("multi_scale_predict: factors must be positive");
        const std::int64_t th = std::llround(double(H) * f);
        const std::int64_t tw = std::llround(double(W) * f);
        if (th < pe || tw < pe)
            fail(strfmt("multi_scale_predict: factor %.3f scales below the %lld-pixel patch size",
                        f, (long long)pe));
        const std::int64_t rh = std::max<std::int64_t>(pe, std::llround(double(th) / double(pe)) * pe);
        const std::int64_t rw = std::max<std::int64_t>(pe, std::llround(double(tw) / double(pe)) * pe);

        const ImageF rs = resize_bilinear(rgb, rh, rw);
        std::vector<S> rgb_data(rs.v.begin(), rs.v.end());
        TensorT<S> rt = TensorT<S>::from_data({1, 3, rh, rw}, std::move(rgb_data));
        TensorT<S> dt;
        if (!model.config().rgb_only) {
            const ImageF ds = resize_bilinear(depth, rh, rw);
            std::vector<S> dep_data(ds.v.begin(), ds.v.end());
            dt = TensorT<S>::from_data({1, 1, rh, rw}, std::move(dep_data));
        }
        TensorT<S> logits = bilinear_resize(model.forward(rt, dt), H, W);
        const auto lv = logits.values();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += double(lv[i]);
    }

    ImageI out(H, W);
    const std::int64_t HW = H * W;
    for (std::int64_t p = 0; p < HW; ++p) {
        double best = acc[std::size_t(p)];
        int bi = 0;
        for (int k = 1; k < K; ++k) {
            const double v = acc[std::size_t(k * HW + p)];
            if (v > best) {
                best = v;
                bi = k;
            }
        }
        out.v[std::size_t(p)] = bi;
    }
    return out;
}

}  // namespace dm
