#include "doctest.h"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "depthmatch/checkpoint.hpp"
#include "depthmatch/config.hpp"
#include "depthmatch/model.hpp"
#include "test_util.hpp"

using namespace dm;

TEST_CASE("empty config text yields every default") {
    TrainConfig parsed = parse_train_config_text("");
    TrainConfig defaults;
    CHECK(parsed.tau == defaults.tau);
    CHECK(parsed.lambda_u == defaults.lambda_u);
    CHECK(parsed.masking_ratio == defaults.masking_ratio);
    CHECK(parsed.embed_dim == defaults.embed_dim);
    CHECK(parsed.use_lspi == defaults.use_lspi);
    CHECK(parsed.seed == defaults.seed);
    CHECK(config_hash(parsed) == config_hash(defaults));
}

TEST_CASE("resolved text reparses to an identical config") {
    TrainConfig cfg;
    cfg.tau = 0.5;
    cfg.lr = 1.25e-3;
    cfg.masking_ratio = 0.35;
    cfg.use_dgbl = false;
    cfg.rgb_only = false;
    cfg.embed_dim = 32;
    cfg.num_heads = 2;
    cfg.seed = 123456789;

    const std::string text = resolved_config_text(cfg);
    TrainConfig back = parse_train_config_text(text);
    CHECK(resolved_config_text(back) == text);
    CHECK(config_hash(back) == config_hash(cfg));
}

TEST_CASE("the hash is stable and sensitive") {
    TrainConfig a, b;
    CHECK(config_hash(a) == config_hash(a));
    CHECK(config_hash(a) == config_hash(b));
    b.tau = 0.9;
    CHECK(config_hash(a) != config_hash(b));
    b = a;
    b.use_cpma = false;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("comments, blank lines, and CRLF endings parse cleanly") {
    TrainConfig cfg =
        parse_train_config_text("# leading comment\r\n\r\n  tau = 0.9  \r\nepochs = 7\n");
    CHECK(cfg.tau == 0.9);
    CHECK(cfg.epochs == 7);
}

TEST_CASE("malformed config text is rejected with the offending detail") {
    CHECK_THROWS_WITH_AS(parse_train_config_text("bogus = 1\n"),
                         doctest::Contains("unknown key 'bogus'"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_train_config_text("tau = 0.5\ntau = 0.6\n"),
                         doctest::Contains("duplicate key 'tau'"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_train_config_text("tau 0.5\n"),
                         doctest::Contains("expected 'key = value'"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_train_config_text("tau = abc\n"),
                         doctest::Contains("is not a number"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_train_config_text("epochs = 5x\n"),
                         doctest::Contains("trailing characters"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_train_config_text("tau =\n"), doctest::Contains("empty value"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_train_config_text("use_cpma = yes\n"),
                         doctest::Contains("expected true/false"), std::runtime_error);
}

TEST_CASE("out-of-range values fail validation") {
    CHECK_THROWS_WITH_AS(parse_train_config_text("tau = 1.5\n"),
                         doctest::Contains("must lie in [0,1]"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_train_config_text("masking_ratio = 1.0\n"),
                         doctest::Contains("must lie in [0,1)"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_train_config_text("scale_min = 2.0\nscale_max = 1.0\n"),
                         doctest::Contains("scale_min <= scale_max"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_train_config_text("boundary_threshold = 0\n"),
                         doctest::Contains("(0,1)"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_train_config_text("ema_momentum = 1\n"),
                         doctest::Contains("ema_momentum"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_train_config_text("rgb_only = true\n"),
                         doctest::Contains("rgb_only excludes use_lspi"), std::runtime_error);
}

TEST_CASE("train config maps onto model and optimizer configs") {
    TrainConfig cfg;
    cfg.embed_dim = 32;
    cfg.encoder_blocks = 3;
    cfg.lspi_stages = 2;
    cfg.backbone_lr_multiplier = 0.025;
    cfg.lr = 7e-4;

    ModelConfig mc = cfg.model_config(5);
    CHECK(mc.num_classes == 5);
    CHECK(mc.embed_dim == 32);
    CHECK(mc.encoder_blocks == 3);
    CHECK(mc.lspi_stages == 2);

    OptimConfig oc = cfg.optim_config(250);
    CHECK(oc.base_lr == 7e-4);
    CHECK(oc.total_steps == 250);
    REQUIRE(oc.group_multipliers.size() == 2);
    CHECK(group_multiplier(oc, "enc.1.attn.q.weight") == 0.025);
    CHECK(group_multiplier(oc, "embed.rgb.pos") == 0.025);
    CHECK(group_multiplier(oc, "dec.weight") == 1.0);
    CHECK(group_multiplier(oc, "lspi.0.wf.weight") == 1.0);
}

TEST_CASE("scene specs parse and validate") {
    SyntheticSceneSpec spec = parse_scene_spec_text(
        "height = 96\nwidth = 128\nnum_classes = 5\nshapes_min = 1\nshapes_max = 3\n"
        "color_ambiguity = 0.5\nnoise_std = 0.01\ndepth_noise_std = 0.002\nseed = 9\n"
        "labeled_fraction = 0.25\nsplit_seed = 3\n");
    CHECK(spec.height == 96);
    CHECK(spec.width == 128);
    CHECK(spec.num_classes == 5);
    CHECK(spec.shapes_min == 1);
    CHECK(spec.shapes_max == 3);
    CHECK(spec.color_ambiguity == 0.5);
    CHECK(spec.labeled_fraction == 0.25);

    CHECK_THROWS_WITH_AS(parse_scene_spec_text("bogus = 1\n"),
                         doctest::Contains("scene spec: unknown key"), std::runtime_error);
}

TEST_CASE("checkpoints round-trip every field bit-exactly") {
    auto dir = dmtest::test_dir("checkpoint_roundtrip");
    CheckpointData d;
    d.model.patch_size = 4;
    d.model.embed_dim = 16;
    d.model.encoder_blocks = 2;
    d.model.num_heads = 2;
    d.model.num_classes = 3;
    d.model.pos_grid = 4;
    d.model.rgb_only = false;
    d.model.use_lspi = true;
    d.model.lspi_stages = 1;
    d.resolved_config = "tau = 0.5\nseed = 7\n";
    d.config_hash = fnv1a(d.resolved_config);
    d.epoch = 3;
    d.global_step = 42;
    d.add_blob("a", {2, 3}, {1.f, -2.5f, 0.125f, 3e-7f, 1e9f, -0.f});
    d.add_blob("teacher.a", {2, 3}, {9.f, 8.f, 7.f, 6.f, 5.f, 4.f});
    d.add_blob("optim.m.a", {6}, {0.f, 0.f, 0.f, 0.f, 0.f, 0.f});

    const auto path = dir / "ck.dmck";
    save_checkpoint(path, d);
    CheckpointData r = load_checkpoint(path);

    CHECK(r.version == 1);
    CHECK(r.model.patch_size == 4);
    CHECK(r.model.embed_dim == 16);
    CHECK(r.model.num_classes == 3);
    CHECK(r.model.use_lspi);
    CHECK_FALSE(r.model.rgb_only);
    CHECK(r.resolved_config == d.resolved_config);
    CHECK(r.config_hash == d.config_hash);
    CHECK(r.epoch == 3);
    CHECK(r.global_step == 42);
    REQUIRE(r.blobs.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(r.blobs[i].first == d.blobs[i].first);  // order preserved
        CHECK(r.blobs[i].second.first == d.blobs[i].second.first);
        CHECK(r.blobs[i].second.second == d.blobs[i].second.second);
    }
    REQUIRE(r.find("teacher.a") != nullptr);
    CHECK(r.find("nope") == nullptr);
}

TEST_CASE("corrupt checkpoint files are diagnosed") {
    auto dir = dmtest::test_dir("checkpoint_corrupt");
    CheckpointData d;
    d.model.num_classes = 2;
    d.add_blob("a", {2}, {1.f, 2.f});
    const auto path = dir / "ck.dmck";
    save_checkpoint(path, d);

    const auto bad_magic = dir / "bad_magic.dmck";
    dmtest::write_bytes(bad_magic, "XXXXnot a checkpoint");
    CHECK_THROWS_WITH_AS(load_checkpoint(bad_magic), doctest::Contains("bad magic"),
                         std::runtime_error);

    std::string raw = dmtest::read_bytes(path);
    const auto truncated = dir / "truncated.dmck";
    dmtest::write_bytes(truncated, raw.substr(0, 20));
    CHECK_THROWS_WITH_AS(load_checkpoint(truncated), doctest::Contains("truncated checkpoint"),
                         std::runtime_error);

    const auto trailing = dir / "trailing.dmck";
    dmtest::write_bytes(trailing, raw + "Z");
    CHECK_THROWS_WITH_AS(load_checkpoint(trailing), doctest::Contains("trailing garbage"),
                         std::runtime_error);

    std::string versioned = raw;
    versioned[4] = char(2);  // little-endian u32 version right after the magic
    const auto bad_version = dir / "version.dmck";
    dmtest::write_bytes(bad_version, versioned);
    CHECK_THROWS_WITH_AS(load_checkpoint(bad_version),
                         doctest::Contains("unsupported checkpoint version 2"), std::runtime_error);

    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "absent.dmck"),
                         doctest::Contains("cannot open checkpoint"), std::runtime_error);
}

TEST_CASE("parameters restore from prefixed blobs with shape checks") {
    ModelConfig mc;
    mc.patch_size = 4;
    mc.embed_dim = 8;
    mc.encoder_blocks = 1;
    mc.num_heads = 2;
    mc.num_classes = 2;
    mc.pos_grid = 2;
    mc.lspi_stages = 1;
    SegModel src(mc, 1);

    CheckpointData d;
    d.model = mc;
    for (const auto& [name, t] : src.params().items())
        d.add_blob("teacher." + name, t.shape(),
                   std::vector<float>(t.values().begin(), t.values().end()));

    SegModel dst(mc, 2);  // different init, then restored from the blobs
    load_params_from_blobs(d, "teacher.", dst.params());
    for (std::size_t i = 0; i < src.params().size(); ++i) {
        const auto sv = src.params().items()[i].second.values();
        const auto dv = dst.params().items()[i].second.values();
        CHECK(std::vector<float>(sv.begin(), sv.end()) == std::vector<float>(dv.begin(), dv.end()));
    }

    SegModel other(mc, 3);
    CHECK_THROWS_WITH_AS(load_params_from_blobs(d, "optim.m.", other.params()),
                         doctest::Contains("missing parameter 'optim.m."), std::runtime_error);

    CheckpointData wrong = d;
    wrong.blobs[0].second.first = {1, 1};
    wrong.blobs[0].second.second = {0.f};
    CHECK_THROWS_WITH_AS(load_params_from_blobs(wrong, "teacher.", other.params()),
                         doctest::Contains("shape mismatch"), std::runtime_error);
}
