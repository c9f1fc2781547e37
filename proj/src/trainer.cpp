#include "depthmatch/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "depthmatch/augmentation.hpp"
#include "depthmatch/boundary.hpp"
#include "depthmatch/losses.hpp"
#include "depthmatch/metrics.hpp"

namespace dm {
namespace {

TrainConfig validated(TrainConfig cfg) {
    cfg.validate();
    return cfg;
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

std::int64_t steps_per_epoch_of(const DatasetManifest& m, const TrainConfig& cfg) {
    if (m.labeled_ids.empty()) fail("training requires at least one labeled image");
    const std::int64_t U = std::int64_t(m.unlabeled_ids.size());
    if (U > 0) return ceil_div(U, cfg.batch_unlabeled);
    return ceil_div(std::int64_t(m.labeled_ids.size()), cfg.batch_labeled);
}

std::vector<std::int64_t> make_perm(std::int64_t n, std::uint64_t seed) {
    std::vector<std::int64_t> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    Rng rng(seed);
    for (std::int64_t i = n - 1; i > 0; --i) {
        const std::int64_t j = std::int64_t(rng.uniform_int(std::uint64_t(i + 1)));
        std::swap(p[std::size_t(i)], p[std::size_t(j)]);
    }
    return p;
}

void check_uniform_sizes(const std::vector<RawSample>& v, const char* pool) {
    for (const auto& s : v)
        if (s.rgb.h != v.front().rgb.h || s.rgb.w != v.front().rgb.w)
            fail(strfmt("all %s images must share one size; found %lldx%lld and %lldx%lld", pool,
                        (long long)v.front().rgb.h, (long long)v.front().rgb.w,
                        (long long)s.rgb.h, (long long)s.rgb.w));
}

// Stacks images onto a zero-filled canvas of hp x wp (>= the image size).
TensorT<float> pack_images(const std::vector<const ImageF*>& ims, std::int64_t c, std::int64_t hp,
                           std::int64_t wp) {
    const std::int64_t B = std::int64_t(ims.size());
    std::vector<float> data(std::size_t(B * c * hp * wp), 0.f);
    for (std::int64_t b = 0; b < B; ++b) {
        const ImageF& im = *ims[std::size_t(b)];
        if (im.c != c) fail("pack_images: channel count mismatch");
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t y = 0; y < im.h; ++y) {
                const float* src = &im.v[std::size_t((ch * im.h + y) * im.w)];
                float* dst = &data[std::size_t(((b * c + ch) * hp + y) * wp)];
                std::copy(src, src + im.w, dst);
            }
    }
    return TensorT<float>::from_data({B, c, hp, wp}, std::move(data));
}

TensorT<float> crop_logits(TensorT<float> t, std::int64_t h, std::int64_t w) {
    if (t.dim(2) != h) t = slice(t, 2, 0, h);
    if (t.dim(3) != w) t = slice(t, 3, 0, w);
    return t;
}

}  // namespace

std::string format_log_line(const TrainLogRecord& r) {
    return strfmt(
        "step=%lld epoch=%d lr=%.9g loss_l=%.9g loss_u=%.9g loss_dgb=%.9g f_t=%.9g "
        "valid_pixel_fraction=%.9g",
        (long long)r.step, r.epoch, r.lr, r.loss_l, r.loss_u, r.loss_dgb, r.f_t,
        r.valid_pixel_fraction);
}

Trainer::Trainer(const DatasetManifest& manifest, const TrainConfig& cfg,
                 std::filesystem::path out_dir)
    : cfg_(validated(cfg)),
      num_classes_(manifest.num_classes),
      out_dir_(std::move(out_dir)),
      steps_per_epoch_(steps_per_epoch_of(manifest, cfg_)),
      student_(cfg_.model_config(manifest.num_classes), cfg_.seed),
      teacher_(student_, cfg_.ema_momentum),
      optim_(student_.params(), cfg_.optim_config(steps_per_epoch_ * cfg_.epochs)) {
    labeled_.reserve(manifest.labeled_ids.size());
    for (const auto& id : manifest.labeled_ids)
        labeled_.push_back(load_sample(manifest, id, /*require_label=*/true));
    unlabeled_.reserve(manifest.unlabeled_ids.size());
    for (const auto& id : manifest.unlabeled_ids)
        unlabeled_.push_back(load_sample(manifest, id, /*require_label=*/false));
    check_uniform_sizes(labeled_, "labeled");
    check_uniform_sizes(unlabeled_, "unlabeled");
}

std::vector<const RawSample*> Trainer::draw_labeled() {
    const std::int64_t L = std::int64_t(labeled_.size());
    const std::int64_t B = cfg_.batch_labeled;
    std::vector<const RawSample*> out;
    out.reserve(std::size_t(B));
    for (std::int64_t j = 0; j < B; ++j) {
        const std::int64_t d = global_step_ * B + j;
        const std::int64_t refill = d / L;
        if (refill != cached_refill_) {
            cached_perm_l_ = make_perm(L, derive_seed(cfg_.seed, "order_l", std::uint64_t(refill)));
            cached_refill_ = refill;
        }
        out.push_back(&labeled_[std::size_t(cached_perm_l_[std::size_t(d % L)])]);
    }
    return out;
}

std::vector<const RawSample*> Trainer::draw_unlabeled(int epoch) {
    const std::int64_t U = std::int64_t(unlabeled_.size());
    if (epoch != cached_uepoch_) {
        cached_perm_u_ = make_perm(U, derive_seed(cfg_.seed, "order_u", std::uint64_t(epoch)));
        cached_uepoch_ = epoch;
    }
    const std::int64_t s = global_step_ % steps_per_epoch_;
    const std::int64_t lo = s * cfg_.batch_unlabeled;
    const std::int64_t hi = std::min(lo + cfg_.batch_unlabeled, U);
    std::vector<const RawSample*> out;
    out.reserve(std::size_t(hi - lo));
    for (std::int64_t i = lo; i < hi; ++i)
        out.push_back(&unlabeled_[std::size_t(cached_perm_u_[std::size_t(i)])]);
    return out;
}

TrainLogRecord Trainer::train_step(int epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    LossSchedule sched;
    sched.lambda_u = cfg_.lambda_u;
    sched.t_max = cfg_.epochs;
    sched.current_t = epoch;
    sched.validate();

    const std::int64_t pe = cfg_.patch_size;
    const bool unsup = !unlabeled_.empty() && cfg_.lambda_u > 0;

    WeakAugmentConfig wcfg;
    wcfg.flip_prob = cfg_.flip_prob;
    wcfg.scale_min = cfg_.scale_min;
    wcfg.scale_max = cfg_.scale_max;

    const auto lbatch = draw_labeled();
    std::vector<WeakView> lweak;
    lweak.reserve(lbatch.size());
    for (const RawSample* s : lbatch) {
        Rng rng(derive_seed(cfg_.seed, "weak_l", std::uint64_t(epoch), fnv1a(s->id)));
        lweak.push_back(weak_augment(*s, wcfg, rng));
    }
    if (cfg_.use_cpma && cfg_.cpma_on_labeled) {
        for (std::size_t i = 0; i < lweak.size(); ++i) {
            Rng rng(derive_seed(cfg_.seed, "cpma_l", std::uint64_t(epoch), fnv1a(lbatch[i]->id)));
            const PatchMask mask = sample_patch_mask(lweak[i].rgb.h, lweak[i].rgb.w,
                                                     cfg_.cpma_patch_size, cfg_.masking_ratio, rng);
            lweak[i].rgb = cpma(lweak[i].rgb, lweak[i].depth, mask);
        }
    }
    const std::int64_t Hl = lweak.front().rgb.h, Wl = lweak.front().rgb.w;
    const std::int64_t Hlp = ceil_div(Hl, pe) * pe, Wlp = ceil_div(Wl, pe) * pe;
    std::vector<const ImageF*> lrgb, ldep;
    std::vector<ImageI> llabels;
    for (const auto& v : lweak) {
        lrgb.push_back(&v.rgb);
        ldep.push_back(&v.depth);
        llabels.push_back(v.label);
    }
    TensorT<float> rgb_l = pack_images(lrgb, 3, Hlp, Wlp);
    TensorT<float> dep_l;
    if (!cfg_.rgb_only) dep_l = pack_images(ldep, 1, Hlp, Wlp);
    TensorT<float> logits_l = crop_logits(student_.forward(rgb_l, dep_l), Hl, Wl);
    LossResult<float> sup = supervised_loss(logits_l, llabels);

    TensorT<float> l_unsup = TensorT<float>::scalar(0.f);
    TensorT<float> l_dgb = TensorT<float>::scalar(0.f);
    double valid_frac = 0.0;
    if (unsup) {
        const auto ubatch = draw_unlabeled(epoch);
        std::vector<WeakView> uweak;
        uweak.reserve(ubatch.size());
        for (const RawSample* s : ubatch) {
            Rng rng(derive_seed(cfg_.seed, "weak_u", std::uint64_t(epoch), fnv1a(s->id)));
            uweak.push_back(weak_augment(*s, wcfg, rng));
        }
        const std::int64_t Hu = uweak.front().rgb.h, Wu = uweak.front().rgb.w;
        const std::int64_t Hup = ceil_div(Hu, pe) * pe, Wup = ceil_div(Wu, pe) * pe;
        std::vector<const ImageF*> urgb, udep;
        for (const auto& v : uweak) {
            urgb.push_back(&v.rgb);
            udep.push_back(&v.depth);
        }
        TensorT<float> rgb_uw = pack_images(urgb, 3, Hup, Wup);
        TensorT<float> dep_u;
        if (!cfg_.rgb_only) dep_u = pack_images(udep, 1, Hup, Wup);

        // teacher params carry no gradients, so this stays out of the graph
        TensorT<float> tprobs =
            softmax(crop_logits(teacher_.model.forward(rgb_uw, dep_u), Hu, Wu), 1);
        const PseudoLabelBatch pl = make_pseudo_label(tprobs, cfg_.tau);
        valid_frac = pl.valid_fraction;

        StrongAugmentConfig scfg;
        scfg.jitter_prob = cfg_.jitter_prob;
        scfg.grayscale_prob = cfg_.grayscale_prob;
        scfg.blur_prob = cfg_.blur_prob;
        scfg.use_cpma = cfg_.use_cpma;
        scfg.cpma_patch_size = cfg_.cpma_patch_size;
        scfg.masking_ratio = cfg_.masking_ratio;
        std::vector<ImageF> strong;
        strong.reserve(ubatch.size());
        for (std::size_t i = 0; i < ubatch.size(); ++i) {
            Rng rng(derive_seed(cfg_.seed, "strong", std::uint64_t(epoch), fnv1a(ubatch[i]->id)));
            strong.push_back(strong_augment(uweak[i], scfg, rng).rgb);
        }
        std::vector<const ImageF*> srgb;
        for (const auto& im : strong) srgb.push_back(&im);
        TensorT<float> rgb_us = pack_images(srgb, 3, Hup, Wup);
        TensorT<float> logits_u = crop_logits(student_.forward(rgb_us, dep_u), Hu, Wu);
        l_unsup = unsupervised_loss(logits_u, pl).loss;

        if (cfg_.use_dgbl) {
            TensorT<float> probs_u = softmax(logits_u, 1);
            const BoundaryMapT<float> bm_p =
                boundary_from_prediction(probs_u, float(cfg_.boundary_threshold));
            std::vector<const ImageF*> udep0;
            for (const auto& v : uweak) udep0.push_back(&v.depth);
            TensorT<float> dep_u0 = pack_images(udep0, 1, Hu, Wu);
            const BoundaryMapT<float> bm_d =
                boundary_from_depth(dep_u0, float(cfg_.boundary_threshold));
            l_dgb = dgbl_loss(bm_p, bm_d, cfg_.dgbl_soft_mode);
        }
    }

    TensorT<float> total = total_loss(sup.loss, l_unsup, l_dgb, sched);
    const double lr_now = lr_at(optim_.config(), global_step_);
    student_.params().zero_grads();
    total.backward();
    optim_.step(global_step_);
    ema_update(teacher_, student_);
    global_step_++;

    TrainLogRecord r;
    r.step = global_step_;
    r.epoch = epoch;
    r.lr = lr_now;
    r.loss_l = double(sup.loss.item());
    r.loss_u = double(l_unsup.item());
    r.loss_dgb = double(l_dgb.item());
    r.f_t = schedule_weight(sched);
    r.valid_pixel_fraction = valid_frac;
    r.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

CheckpointData Trainer::snapshot() const {
    CheckpointData d;
    d.model = student_.config();
    d.resolved_config = resolved_config_text(cfg_);
    d.config_hash = config_hash(cfg_);
    d.epoch = epochs_done_;
    d.global_step = global_step_;
    for (const auto& [name, t] : student_.params().items())
        d.add_blob(name, t.shape(), std::vector<float>(t.values().begin(), t.values().end()));
    for (const auto& [name, t] : teacher_.model.params().items())
        d.add_blob("teacher." + name, t.shape(),
                   std::vector<float>(t.values().begin(), t.values().end()));
    const auto& items = student_.params().items();
    const auto& slots = optim_.slots();
    for (std::size_t i = 0; i < slots.size(); ++i) {
        d.add_blob("optim.m." + slots[i].name, items[i].second.shape(), slots[i].m);
        d.add_blob("optim.v." + slots[i].name, items[i].second.shape(), slots[i].v);
    }
    return d;
}

void Trainer::restore(const CheckpointData& d) {
    if (d.config_hash != config_hash(cfg_))
        fail(strfmt("checkpoint config hash %016llx does not match current config %016llx",
                    (unsigned long long)d.config_hash, (unsigned long long)config_hash(cfg_)));
    if (d.model.num_classes != num_classes_)
        fail(strfmt("checkpoint has %d classes but the dataset manifest declares %d",
                    d.model.num_classes, num_classes_));
    if (d.epoch < 0 || d.global_step != d.epoch * steps_per_epoch_)
        fail(strfmt("checkpoint step count %lld inconsistent with %lld steps per epoch",
                    (long long)d.global_step, (long long)steps_per_epoch_));
    load_params_from_blobs(d, "", student_.params());
    load_params_from_blobs(d, "teacher.", teacher_.model.params());
    for (auto& slot : optim_.slots()) {
        const auto* mb = d.find("optim.m." + slot.name);
        const auto* vb = d.find("optim.v." + slot.name);
        if (!mb || !vb) fail("checkpoint missing optimizer state for '" + slot.name + "'");
        if (mb->second.size() != slot.m.size() || vb->second.size() != slot.v.size())
            fail("checkpoint optimizer state size mismatch for '" + slot.name + "'");
        slot.m = mb->second;
        slot.v = vb->second;
    }
    optim_.set_update_count(d.global_step);
    teacher_.step_count = d.global_step;
    global_step_ = d.global_step;
    epochs_done_ = d.epoch;
    cached_refill_ = -1;
    cached_uepoch_ = -1;
}

void Trainer::save_state(const std::filesystem::path& path) const {
    save_checkpoint(path, snapshot());
}

void Trainer::run(bool resume) {
    std::filesystem::create_directories(out_dir_);
    const auto log_path = out_dir_ / "train_log.txt";
    const auto last_path = out_dir_ / "ckpt_last.dmck";
    if (resume) {
        if (!std::filesystem::exists(last_path))
            fail("resume requested but " + last_path.string() + " does not exist");
        restore(load_checkpoint(last_path));
        last_ckpt_ = last_path;
    }
    std::ofstream log(log_path,
                      resume ? (std::ios::out | std::ios::app) : (std::ios::out | std::ios::trunc));
    if (!log) fail("cannot open log file " + log_path.string());

    for (int epoch = int(epochs_done_) + 1; epoch <= cfg_.epochs; ++epoch) {
        const auto e0 = std::chrono::steady_clock::now();
        TrainLogRecord r;
        for (std::int64_t s = 0; s < steps_per_epoch_; ++s) {
            try {
                r = train_step(epoch);
            } catch (const std::exception& e) {
                fail(strfmt("%s (last good checkpoint: %s)", e.what(),
                            last_ckpt_.empty() ? "none" : last_ckpt_.string().c_str()));
            }
            log << format_log_line(r) << "\n";
        }
        log.flush();
        epochs_done_ = epoch;
        save_state(last_path);
        last_ckpt_ = last_path;
        const double es =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - e0).count();
        std::printf("epoch %d/%d  step %lld  loss_l=%.4f loss_u=%.4f loss_dgb=%.4f  (%.1fs)\n",
                    epoch, cfg_.epochs, (long long)global_step_, r.loss_l, r.loss_u, r.loss_dgb,
                    es);
        std::fflush(stdout);
    }
    save_state(out_dir_ / "ckpt_final.dmck");
}

EvalReport evaluate(const CheckpointData& ckpt, const DatasetManifest& manifest,
                    const EvalOptions& opt) {
    if (opt.weights != "student" && opt.weights != "teacher" && opt.weights != "both")
        fail("eval weights must be one of: student, teacher, both");
    if (ckpt.model.num_classes != manifest.num_classes)
        fail(strfmt("checkpoint has %d classes but the dataset manifest declares %d",
                    ckpt.model.num_classes, manifest.num_classes));
    if (manifest.labeled_ids.empty()) fail("evaluation requires labeled samples");

    bool teacher_present = false;
    for (const auto& [name, blob] : ckpt.blobs)
        if (name.rfind("teacher.", 0) == 0) teacher_present = true;
    if (opt.weights == "teacher" && !teacher_present)
        fail("checkpoint holds no teacher weights");

    std::vector<RawSample> samples;
    samples.reserve(manifest.labeled_ids.size());
    for (const auto& id : manifest.labeled_ids)
        samples.push_back(load_sample(manifest, id, /*require_label=*/true));
    std::size_t n_inst = 0;
    for (const auto& s : samples)
        if (!s.instance.empty()) n_inst++;
    if (n_inst != 0 && n_inst != samples.size())
        fail("instance maps are present for only part of the dataset");
    const bool do_iiou = n_inst == samples.size();

    const std::vector<double>& factors = opt.multi_scale ? kMultiScales : kSingleScale;
    const int K = manifest.num_classes;

    EvalReport rep;
    rep.headline = opt.weights == "teacher" ? "teacher" : "student";
    const std::string headline_prefix = rep.headline == "teacher" ? "teacher." : "";

    auto run_weights = [&](const std::string& prefix) {
        SegModel model(ckpt.model, 0, /*requires_grad=*/false);
        load_params_from_blobs(ckpt, prefix, model.params());
        ConfusionMatrix cm(K);
        InstanceIouAccumulator ia(K);
        if (do_iiou) {
            for (std::size_t i = 0; i < samples.size(); ++i)
                ia.add_sizes(samples[i].label, samples[i].instance, std::int64_t(i));
            ia.finalize_sizes();
        }
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto& s = samples[i];
            const ImageI pred = multi_scale_predict(model, s.rgb, s.depth, factors);
            cm.accumulate(pred, s.label);
            if (do_iiou) ia.accumulate(pred, s.label, s.instance, std::int64_t(i));
        }
        EvalWeightsMetrics wm;
        wm.images = std::int64_t(samples.size());
        wm.pixels = cm.total();
        wm.pixel_accuracy = cm.pixel_accuracy();
        const auto ir = cm.miou();
        wm.miou = ir.miou;
        wm.class_iou = ir.per_class;
        wm.class_iou_valid = ir.has_union;
        wm.class_pixels.assign(std::size_t(K), 0);
        for (int t = 0; t < K; ++t)
            for (int p = 0; p < K; ++p) wm.class_pixels[std::size_t(t)] += cm.count(t, p);
        if (do_iiou) {
            const auto r2 = ia.report();
            wm.has_iiou = true;
            wm.iiou = r2.mean;
            wm.class_iiou = r2.per_class;
            wm.class_iiou_valid.assign(r2.has_instances.begin(), r2.has_instances.end());
        }
        if (!opt.confusion_csv.empty() && prefix == headline_prefix)
            cm.write_csv(opt.confusion_csv);
        return wm;
    };

    if (opt.weights != "teacher") {
        rep.student = run_weights("");
        rep.has_student = true;
    }
    if (opt.weights != "student" && teacher_present) {
        rep.teacher = run_weights("teacher.");
        rep.has_teacher = true;
    }

    std::ostringstream os;
    os << "num_classes = " << K << "\n";
    os << "evaluated_images = " << samples.size() << "\n";
    os << "multi_scale = " << (opt.multi_scale ? "true" : "false") << "\n";
    os << "headline = " << rep.headline << "\n";
    const EvalWeightsMetrics& hm = rep.headline_metrics();
    os << "evaluated_pixels = " << hm.pixels << "\n";
    os << "pixel_accuracy = " << strfmt("%.9g", hm.pixel_accuracy) << "\n";
    os << "miou = " << strfmt("%.9g", hm.miou) << "\n";
    if (hm.has_iiou) os << "iiou = " << strfmt("%.9g", hm.iiou) << "\n";
    auto section = [&](const char* name, const EvalWeightsMetrics& w) {
        os << name << ".pixel_accuracy = " << strfmt("%.9g", w.pixel_accuracy) << "\n";
        os << name << ".miou = " << strfmt("%.9g", w.miou) << "\n";
        for (int k = 0; k < K; ++k)
            if (w.class_iou_valid[std::size_t(k)])
                os << name << ".class_iou." << k << " = "
                   << strfmt("%.9g", w.class_iou[std::size_t(k)]) << "\n";
        for (int k = 0; k < K; ++k)
            os << name << ".class_pixels." << k << " = " << w.class_pixels[std::size_t(k)] << "\n";
        if (w.has_iiou) {
            os << name << ".iiou = " << strfmt("%.9g", w.iiou) << "\n";
            for (int k = 0; k < K; ++k)
                if (w.class_iiou_valid[std::size_t(k)])
                    os << name << ".class_iiou." << k << " = "
                       << strfmt("%.9g", w.class_iiou[std::size_t(k)]) << "\n";
        }
    };
    if (rep.has_student) section("student", rep.student);
    if (rep.has_teacher) section("teacher", rep.teacher);
    rep.text = os.str();
    return rep;
}

}  // namespace dm
