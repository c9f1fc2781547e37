#include "depthmatch/metrics.hpp"

#include <fstream>
#include <tuple>

namespace dm {

ConfusionMatrix::ConfusionMatrix(int num_classes) : K_(num_classes) {
    if (num_classes < 2) fail("confusion matrix: need at least 2 classes");
    counts_.assign(std::size_t(K_) * std::size_t(K_), 0);
}

void ConfusionMatrix::accumulate(const ImageI& pred, const ImageI& truth) {
    if (pred.h != truth.h || pred.w != truth.w)
        fail("confusion matrix: pred and truth sizes differ");
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const std::int32_t t = truth.v[i];
        if (t == 255) continue;
        const std::int32_t p = pred.v[i];
        if (t < 0 || t >= K_) fail(strfmt("confusion matrix: truth class %d out of range", t));
        if (p < 0 || p >= K_) fail(strfmt("confusion matrix: predicted class %d out of range", p));
        counts_[std::size_t(t * K_ + p)]++;
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.K_ != K_) fail("confusion matrix: class count mismatch in merge");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t n = 0;
    for (auto c : counts_) n += c;
    return n;
}

double ConfusionMatrix::pixel_accuracy() const {
    const std::int64_t n = total();
    if (n == 0) fail("pixel accuracy: no evaluated pixels");
    std::int64_t diag = 0;
    for (int k = 0; k < K_; ++k) diag += counts_[std::size_t(k * K_ + k)];
    return double(diag) / double(n);
}

ConfusionMatrix::IouReport ConfusionMatrix::miou() const {
    IouReport r;
    r.per_class.assign(std::size_t(K_), 0.0);
    r.has_union.assign(std::size_t(K_), false);
    double sum = 0.0;
    int n_valid = 0;
    for (int k = 0; k < K_; ++k) {
        std::int64_t tp = counts_[std::size_t(k * K_ + k)];
        std::int64_t row = 0, col = 0;
        for (int j = 0; j < K_; ++j) {
            row += counts_[std::size_t(k * K_ + j)];
            col += counts_[std::size_t(j * K_ + k)];
        }
        const std::int64_t uni = row + col - tp;
        if (uni == 0) continue;
        r.has_union[std::size_t(k)] = true;
        r.per_class[std::size_t(k)] = double(tp) / double(uni);
        sum += r.per_class[std::size_t(k)];
        n_valid++;
    }
    if (n_valid == 0) fail("miou: every class has zero union");
    r.miou = sum / double(n_valid);
    return r;
}

void ConfusionMatrix::write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) fail("cannot create confusion csv: " + path);
    f << "truth\\pred";
    for (int k = 0; k < K_; ++k) f << ",class_" << k;
    f << "\n";
    for (int t = 0; t < K_; ++t) {
        f << "class_" << t;
        for (int p = 0; p < K_; ++p) f << "," << counts_[std::size_t(t * K_ + p)];
        f << "\n";
    }
    if (!f) fail("write failure: " + path);
}

InstanceIouAccumulator::InstanceIouAccumulator(int num_classes) : K_(num_classes) {
    if (num_classes < 2) fail("instance iou: need at least 2 classes");
    mean_size_.assign(std::size_t(K_), 0.0);
    inst_count_.assign(std::size_t(K_), 0);
    itp_.assign(std::size_t(K_), 0.0);
    ifn_.assign(std::size_t(K_), 0.0);
    fp_.assign(std::size_t(K_), 0);
}

void InstanceIouAccumulator::add_sizes(const ImageI& truth, const ImageI& instance,
                                       std::int64_t image_index) {
    if (finalized_) fail("instance iou: sizes already finalized");
    if (instance.empty()) fail("instance iou: missing instance ids");
    if (truth.h != instance.h || truth.w != instance.w)
        fail("instance iou: truth and instance sizes differ");
    for (std::size_t i = 0; i < truth.v.size(); ++i) {
        const std::int32_t c = truth.v[i];
        const std::int32_t id = instance.v[i];
        if (c == 255 || c == 0 || id == 0) continue;
        if (c < 0 || c >= K_) fail(strfmt("instance iou: class %d out of range", c));
        sizes_[{image_index, id, c}]++;
    }
}

void InstanceIouAccumulator::finalize_sizes() {
    if (finalized_) fail("instance iou: sizes already finalized");
    std::vector<double> total(std::size_t(K_), 0.0);
    for (const auto& [key, px] : sizes_) {
        const std::int32_t c = std::get<2>(key);
        total[std::size_t(c)] += double(px);
        inst_count_[std::size_t(c)]++;
    }
    for (int c = 0; c < K_; ++c)
        if (inst_count_[std::size_t(c)] > 0)
            mean_size_[std::size_t(c)] = total[std::size_t(c)] / double(inst_count_[std::size_t(c)]);
    finalized_ = true;
}

void InstanceIouAccumulator::accumulate(const ImageI& pred, const ImageI& truth,
                                        const ImageI& instance, std::int64_t image_index) {
    if (!finalized_) fail("instance iou: finalize_sizes must run before accumulation");
    if (instance.empty()) fail("instance iou: missing instance ids");
    if (pred.h != truth.h || pred.w != truth.w || truth.h != instance.h || truth.w != instance.w)
        fail("instance iou: image sizes differ");
    for (std::size_t i = 0; i < truth.v.size(); ++i) {
        const std::int32_t t = truth.v[i];
        const std::int32_t p = pred.v[i];
        if (t == 255) continue;
        if (t > 0) {
            const std::int32_t id = instance.v[i];
            double w = 1.0;  // fallback for instance-class pixels without an id
            if (id != 0) {
                auto it = sizes_.find({image_index, id, t});
                if (it != sizes_.end() && it->second > 0)
                    w = mean_size_[std::size_t(t)] / double(it->second);
            }
            if (p == t)
                itp_[std::size_t(t)] += w;
            else
                ifn_[std::size_t(t)] += w;
        }
        if (p > 0 && p < K_ && p != t) fp_[std::size_t(p)]++;
    }
}

InstanceIouAccumulator::Report InstanceIouAccumulator::report() const {
    if (!finalized_) fail("instance iou: finalize_sizes must run before the report");
    Report r;
    r.per_class.assign(std::size_t(K_), 0.0);
    r.has_instances.assign(std::size_t(K_), false);
    double sum = 0.0;
    int n = 0;
    for (int c = 1; c < K_; ++c) {
        if (inst_count_[std::size_t(c)] == 0) continue;
        const double denom = itp_[std::size_t(c)] + ifn_[std::size_t(c)] + double(fp_[std::size_t(c)]);
        r.has_instances[std::size_t(c)] = true;
        r.per_class[std::size_t(c)] = denom > 0 ? itp_[std::size_t(c)] / denom : 0.0;
        sum += r.per_class[std::size_t(c)];
        n++;
    }
    if (n == 0) fail("instance iou: no class has instances");
    r.mean = sum / double(n);
    return r;
}

}  // namespace dm
