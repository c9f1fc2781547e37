// depthmatch command-line interface. Every failure path prints a single
// "error: <message>" line to stderr and exits nonzero.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "depthmatch/augmentation.hpp"
#include "depthmatch/boundary.hpp"
#include "depthmatch/config.hpp"
#include "depthmatch/data_io.hpp"
#include "depthmatch/gradcheck_suite.hpp"
#include "depthmatch/trainer.hpp"

namespace fs = std::filesystem;

namespace {

dm::RawSample load_by_id(const std::string& data_dir, const std::string& id) {
    dm::DatasetManifest m = dm::load_manifest(data_dir);
    for (const auto& known : m.labeled_ids)
        if (known == id) return dm::load_sample(m, id, /*require_label=*/false);
    for (const auto& known : m.unlabeled_ids)
        if (known == id) return dm::load_sample(m, id, /*require_label=*/false);
    dm::fail("id '" + id + "' is not listed in " + data_dir + "/manifest.txt");
}

void write_unit_pgm16(const fs::path& path, const dm::ImageF& im) {
    std::vector<std::uint16_t> raw(im.v.size());
    for (std::size_t i = 0; i < im.v.size(); ++i) {
        const float v = std::min(std::max(im.v[i], 0.f), 1.f);
        raw[i] = std::uint16_t(std::lround(v * 65535.0));
    }
    dm::write_pgm16(path, raw, im.h, im.w);
}

void write_unit_pgm8(const fs::path& path, const dm::TensorT<float>& t) {
    // t is [1,1,H,W] with values in [0,1]
    dm::ImageI im(t.dim(2), t.dim(3));
    const auto v = t.values();
    for (std::size_t i = 0; i < im.v.size(); ++i) {
        const float x = std::min(std::max(v[i], 0.f), 1.f);
        im.v[i] = std::int32_t(std::lround(x * 255.0));
    }
    dm::write_pgm8(path, im);
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir, std::int64_t count) {
    dm::SyntheticSceneSpec spec = dm::parse_scene_spec(spec_path);
    dm::DatasetManifest m = dm::generate_synthetic_dataset(spec, count, out_dir);
    std::printf("wrote %lld scenes (%zu labeled, %zu unlabeled) under %s\n", (long long)count,
                m.labeled_ids.size(), m.unlabeled_ids.size(), out_dir.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, bool resume) {
    dm::TrainConfig cfg = dm::parse_train_config(config_path);
    dm::DatasetManifest m = dm::load_manifest(data_dir);
    dm::Trainer trainer(m, cfg, out_dir);
    trainer.run(resume);
    std::printf("final checkpoint: %s\n", (fs::path(out_dir) / "ckpt_final.dmck").string().c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, bool multi_scale,
             const std::string& weights, const std::string& confusion_csv,
             const std::string& report_path) {
    dm::CheckpointData ckpt = dm::load_checkpoint(ckpt_path);
    dm::DatasetManifest m = dm::load_manifest(data_dir);
    dm::EvalOptions opt;
    opt.multi_scale = multi_scale;
    opt.weights = weights;
    opt.confusion_csv = confusion_csv;
    dm::EvalReport rep = dm::evaluate(ckpt, m, opt);
    std::fputs(rep.text.c_str(), stdout);
    if (!report_path.empty()) {
        std::ofstream os(report_path);
        if (!os) dm::fail("cannot open report file " + report_path);
        os << rep.text;
    }
    return 0;
}

int cmd_augment_preview(const std::string& data_dir, const std::string& id, std::uint64_t seed,
                        const std::string& out_dir) {
    dm::RawSample s = load_by_id(data_dir, id);
    fs::create_directories(out_dir);
    const fs::path out(out_dir);

    dm::WeakAugmentConfig wcfg;
    dm::Rng wrng(dm::derive_seed(seed, "preview_weak", 0, dm::fnv1a(id)));
    dm::WeakView weak = dm::weak_augment(s, wcfg, wrng);
    dm::write_ppm(out / (id + "_weak_rgb.ppm"), weak.rgb);
    write_unit_pgm16(out / (id + "_weak_depth.pgm"), weak.depth);
    if (!weak.label.empty()) dm::write_pgm8(out / (id + "_weak_label.pgm"), weak.label);

    dm::StrongAugmentConfig scfg;
    dm::Rng srng(dm::derive_seed(seed, "preview_strong", 0, dm::fnv1a(id)));
    dm::StrongView strong = dm::strong_augment(weak, scfg, srng);
    dm::write_ppm(out / (id + "_strong_rgb.ppm"), strong.rgb);
    if (strong.cpma_applied) {
        dm::ImageI mask(weak.rgb.h, weak.rgb.w);
        for (std::int64_t y = 0; y < mask.h; ++y)
            for (std::int64_t x = 0; x < mask.w; ++x)
                mask.at(y, x) = strong.mask.swapped_at(y, x) ? 255 : 0;
        dm::write_pgm8(out / (id + "_cpma_mask.pgm"), mask);
    }
    std::printf("wrote augmented views for '%s' under %s\n", id.c_str(), out_dir.c_str());
    return 0;
}

int cmd_boundary_extract(const std::string& data_dir, const std::string& id,
                         const std::string& out_dir) {
    dm::RawSample s = load_by_id(data_dir, id);
    fs::create_directories(out_dir);
    const fs::path out(out_dir);

    std::vector<float> d(s.depth.v.begin(), s.depth.v.end());
    dm::TensorT<float> dep =
        dm::TensorT<float>::from_data({1, 1, s.depth.h, s.depth.w}, std::move(d));
    dm::BoundaryMapT<float> bm = dm::boundary_from_depth(dep);
    write_unit_pgm8(out / (id + "_boundary_soft.pgm"), bm.soft);
    write_unit_pgm8(out / (id + "_boundary_bin.pgm"), bm.binarized);
    std::printf("wrote boundary maps for '%s' under %s\n", id.c_str(), out_dir.c_str());
    return 0;
}

int cmd_gradcheck(bool full_model) {
    bool all_pass = true;
    auto report = [&](const dm::GradCheckCase& c) {
        all_pass = all_pass && c.result.pass;
        std::printf("%-22s %s  max_rel_err=%.3e  entries=%lld\n", c.name.c_str(),
                    c.result.pass ? "PASS" : "FAIL", c.result.max_rel_err,
                    (long long)c.result.entries_checked);
        if (!c.result.pass)
            std::printf("  worst %s: analytic=%.6e numeric=%.6e\n", c.result.worst_site.c_str(),
                        c.result.worst_analytic, c.result.worst_numeric);
    };
    for (const auto& c : dm::run_op_gradchecks()) report(c);
    if (full_model) report(dm::run_full_model_gradcheck());
    if (!all_pass) dm::fail("gradient check failed");
    std::printf("all gradient checks passed\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"depthmatch: semi-supervised RGB-D scene parsing"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic RGB-D dataset");
    std::string gen_spec, gen_out;
    std::int64_t gen_count = 0;
    gen->add_option("--spec", gen_spec, "scene spec file (key = value lines)")->required();
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--count", gen_count, "number of scenes")->required();

    auto* train = app.add_subcommand("train", "train a model");
    std::string tr_config, tr_data, tr_out;
    bool tr_resume = false;
    train->add_option("--config", tr_config, "training config file")->required();
    train->add_option("--data", tr_data, "dataset directory")->required();
    train->add_option("--out", tr_out, "output directory for checkpoints and logs")->required();
    train->add_flag("--resume", tr_resume, "continue from <out>/ckpt_last.dmck");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt, ev_data, ev_weights = "both", ev_csv, ev_report;
    bool ev_ms = false;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_flag("--multi-scale", ev_ms, "average logits over multiple scales");
    ev->add_option("--weights", ev_weights, "student | teacher | both (default both)");
    ev->add_option("--confusion-csv", ev_csv, "write the headline confusion matrix as CSV");
    ev->add_option("--report", ev_report, "also write the report to this file");

    auto* prev = app.add_subcommand("augment-preview", "write augmented views for inspection");
    std::string pv_data, pv_id, pv_out;
    std::uint64_t pv_seed = 0;
    prev->add_option("--data", pv_data, "dataset directory")->required();
    prev->add_option("--id", pv_id, "sample id")->required();
    prev->add_option("--seed", pv_seed, "augmentation seed")->required();
    prev->add_option("--out", pv_out, "output directory")->required();

    auto* bex = app.add_subcommand("boundary-extract", "write depth boundary maps");
    std::string bx_data, bx_id, bx_out;
    bex->add_option("--data", bx_data, "dataset directory")->required();
    bex->add_option("--id", bx_id, "sample id")->required();
    bex->add_option("--out", bx_out, "output directory")->required();

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    bool gc_full = false;
    gc->add_flag("--full-model", gc_full, "also check the full network with the composite loss");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }

    try {
        if (*gen) return cmd_gen_data(gen_spec, gen_out, gen_count);
        if (*train) return cmd_train(tr_config, tr_data, tr_out, tr_resume);
        if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_ms, ev_weights, ev_csv, ev_report);
        if (*prev) return cmd_augment_preview(pv_data, pv_id, pv_seed, pv_out);
        if (*bex) return cmd_boundary_extract(bx_data, bx_id, bx_out);
        if (*gc) return cmd_gradcheck(gc_full);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    std::fprintf(stderr, "error: no subcommand selected\n");
    return 1;
}
