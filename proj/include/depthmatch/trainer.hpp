#pragma once

// Training orchestration: batch assembly from a preloaded dataset, the
// weak/strong teacher-student step, per-step logging, per-epoch
// checkpointing, resumption, and evaluation.
//
// Every stochastic site draws from a seed derived as
// hash(global_seed, site_name, epoch, sample_key), so the training stream is
// a pure function of (config, seed, dataset); resumption replays the exact
// continuation from counters alone. An epoch is one pass of the unlabeled
// iterator (the labeled iterator cycles independently); with no unlabeled
// data the labeled set defines the epoch.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "depthmatch/checkpoint.hpp"
#include "depthmatch/config.hpp"
#include "depthmatch/data_io.hpp"
#include "depthmatch/ema.hpp"
#include "depthmatch/model.hpp"
#include "depthmatch/optimizer.hpp"

namespace dm {

struct TrainLogRecord {
    std::int64_t step = 0;  // 1-based global optimizer step
    int epoch = 0;          // 1-based
    double lr = 0.0;
    double loss_l = 0.0;
    double loss_u = 0.0;
    double loss_dgb = 0.0;
    double f_t = 0.0;
    double valid_pixel_fraction = 0.0;
    double elapsed_ms = 0.0;  // wall time; excluded from the log line
};

// Deterministic fields in fixed order; identical runs produce identical text.
std::string format_log_line(const TrainLogRecord& r);

class Trainer {
public:
    Trainer(const DatasetManifest& manifest, const TrainConfig& cfg,
            std::filesystem::path out_dir);

    // Full training run: appends one log line per step to train_log.txt,
    // saves ckpt_last.dmck after each epoch and ckpt_final.dmck at the end.
    // resume=true continues from out_dir/ckpt_last.dmck.
    void run(bool resume = false);

    // One optimizer step at the given 1-based epoch; the position within the
    // epoch follows from the global step counter.
    TrainLogRecord train_step(int epoch);

    CheckpointData snapshot() const;
    void restore(const CheckpointData& d);

    std::int64_t steps_per_epoch() const { return steps_per_epoch_; }
    std::int64_t global_step() const { return global_step_; }
    std::int64_t epochs_done() const { return epochs_done_; }
    SegModel& student() { return student_; }
    Teacher& teacher() { return teacher_; }
    AdamW& optimizer() { return optim_; }
    const TrainConfig& config() const { return cfg_; }
    int num_classes() const { return num_classes_; }

private:
    std::vector<const RawSample*> draw_labeled();
    std::vector<const RawSample*> draw_unlabeled(int epoch);
    void save_state(const std::filesystem::path& path) const;

    TrainConfig cfg_;
    int num_classes_;
    std::filesystem::path out_dir_;
    std::vector<RawSample> labeled_, unlabeled_;
    std::int64_t steps_per_epoch_ = 0;
    SegModel student_;
    Teacher teacher_;
    AdamW optim_;
    std::int64_t global_step_ = 0;  // completed optimizer steps
    std::int64_t epochs_done_ = 0;
    std::filesystem::path last_ckpt_;

    // cached permutations for the two iterators
    std::int64_t cached_refill_ = -1;
    std::vector<std::int64_t> cached_perm_l_;
    std::int64_t cached_uepoch_ = -1;
    std::vector<std::int64_t> cached_perm_u_;
};

inline const std::vector<double> kSingleScale = {1.0};
inline const std::vector<double> kMultiScales = {1.05, 1.5, 2.0, 2.5};

struct EvalOptions {
    bool multi_scale = false;
    std::string weights = "both";  // student | teacher | both (headline student)
    std::string confusion_csv;     // headline confusion matrix; empty = skip
};

struct EvalWeightsMetrics {
    std::int64_t images = 0;
    std::int64_t pixels = 0;  // evaluated (non-ignored) pixels
    double pixel_accuracy = 0.0;
    double miou = 0.0;
    std::vector<double> class_iou;
    std::vector<bool> class_iou_valid;
    std::vector<std::int64_t> class_pixels;  // ground-truth pixels per class
    bool has_iiou = false;
    double iiou = 0.0;
    std::vector<double> class_iiou;
    std::vector<bool> class_iiou_valid;
};

struct EvalReport {
    std::string headline;  // "student" or "teacher"
    bool has_student = false, has_teacher = false;
    EvalWeightsMetrics student, teacher;
    std::string text;  // line-oriented key = value report

    const EvalWeightsMetrics& headline_metrics() const {
        return headline == "teacher" ? teacher : student;
    }
};

// Evaluates the checkpoint on the manifest's labeled samples.
EvalReport evaluate(const CheckpointData& ckpt, const DatasetManifest& manifest,
                    const EvalOptions& opt);

}  // namespace dm
