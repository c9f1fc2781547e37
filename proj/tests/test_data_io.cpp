#include "doctest.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "depthmatch/data_io.hpp"
#include "test_util.hpp"

using namespace dm;
using dmtest::test_dir;
using dmtest::read_bytes;
using dmtest::write_bytes;

TEST_CASE("ppm round trip is bit-identical for representable values") {
    const auto dir = test_dir("ppm_roundtrip");
    ImageF im(3, 4, 5);
    for (std::size_t i = 0; i < im.v.size(); ++i) im.v[i] = float((i * 7) % 256) / 255.f;
    write_ppm(dir / "a.ppm", im);
    ImageF back = read_ppm(dir / "a.ppm");
    REQUIRE(back.h == im.h);
    REQUIRE(back.w == im.w);
    CHECK(back.v == im.v);
}

TEST_CASE("a 2x2 all-zero P6 file reads as zeros") {
    const auto dir = test_dir("ppm_zeros");
    write_bytes(dir / "z.ppm", std::string("P6\n2 2\n255\n") + std::string(12, '\0'));
    ImageF im = read_ppm(dir / "z.ppm");
    CHECK(im.c == 3);
    CHECK(im.h == 2);
    CHECK(im.w == 2);
    for (float v : im.v) CHECK(v == 0.f);
}

TEST_CASE("pgm16 preserves big-endian samples") {
    const auto dir = test_dir("pgm16");
    std::vector<std::uint16_t> v = {0, 1, 255, 256, 65534, 65535};
    write_pgm16(dir / "d.pgm", v, 2, 3);
    // header then explicit big-endian sample bytes
    const std::string raw = read_bytes(dir / "d.pgm");
    const std::string payload = raw.substr(raw.size() - 12);
    CHECK((unsigned char)payload[6] == 1);   // 256 -> high byte 1
    CHECK((unsigned char)payload[7] == 0);   // 256 -> low byte 0
    std::int64_t h = 0, w = 0;
    CHECK(read_pgm16(dir / "d.pgm", h, w) == v);
    CHECK(h == 2);
    CHECK(w == 3);
}

TEST_CASE("pgm8 round trip and range validation") {
    const auto dir = test_dir("pgm8");
    ImageI im(3, 2);
    const std::int32_t vals[] = {0, 1, 2, 254, 255, 17};
    std::copy(std::begin(vals), std::end(vals), im.v.begin());
    write_pgm8(dir / "l.pgm", im);
    ImageI back = read_pgm8(dir / "l.pgm");
    CHECK(back.v == im.v);

    ImageI bad(1, 1);
    bad.v[0] = 300;
    CHECK_THROWS_WITH_AS(write_pgm8(dir / "bad.pgm", bad), doctest::Contains("out of range"),
                         std::runtime_error);
}

TEST_CASE("strict pnm parsing rejects malformed files") {
    const auto dir = test_dir("pnm_strict");
    const std::string good = std::string("P6\n2 1\n255\n") + std::string(6, 'x');
    write_bytes(dir / "good.ppm", good);
    CHECK_NOTHROW(read_ppm(dir / "good.ppm"));

    write_bytes(dir / "trail.ppm", good + "y");
    CHECK_THROWS_WITH_AS(read_ppm(dir / "trail.ppm"), doctest::Contains("trailing garbage"),
                         std::runtime_error);

    write_bytes(dir / "short.ppm", good.substr(0, good.size() - 1));
    CHECK_THROWS_WITH_AS(read_ppm(dir / "short.ppm"), doctest::Contains("truncated"),
                         std::runtime_error);

    write_bytes(dir / "magic.ppm", "P5\n2 1\n255\nxxxxxx");
    CHECK_THROWS_WITH_AS(read_ppm(dir / "magic.ppm"), doctest::Contains("P6"), std::runtime_error);

    write_bytes(dir / "maxval.ppm", "P6\n2 1\n254\nxxxxxx");
    CHECK_THROWS_WITH_AS(read_ppm(dir / "maxval.ppm"), doctest::Contains("maxval"),
                         std::runtime_error);

    // comments in the header are legal
    write_bytes(dir / "comment.ppm", std::string("P6 # ppm\n# size\n2 1\n255\n") + std::string(6, 'x'));
    CHECK_NOTHROW(read_ppm(dir / "comment.ppm"));
}

TEST_CASE("normalize_depth maps the raw range onto [0,1]") {
    ImageF z = normalize_depth({500, 500, 500, 500}, 2, 2);
    for (float v : z.v) CHECK(v == 0.f);  // constant map -> zeros

    ImageF f = normalize_depth({0, 65535, 32768, 16384}, 2, 2);
    CHECK(f.v[0] == 0.f);
    CHECK(f.v[1] == 1.f);
    CHECK(f.v[2] == doctest::Approx(0.5).epsilon(1e-4));

    CHECK_THROWS_WITH_AS(normalize_depth({1, 2}, 2, 2), doctest::Contains("size mismatch"),
                         std::runtime_error);
}

TEST_CASE("split honors the labeled fraction and keeps ids disjoint") {
    std::vector<std::string> ids;
    for (int i = 0; i < 100; ++i) ids.push_back(strfmt("id%03d", i));

    DatasetManifest all = split_manifest("root", ids, 3, 1.0, 7);
    CHECK(all.labeled_ids.size() == 100);
    CHECK(all.unlabeled_ids.empty());

    DatasetManifest m = split_manifest("root", ids, 3, 0.25, 7);
    CHECK(m.labeled_ids.size() == 25);
    CHECK(m.unlabeled_ids.size() == 75);
    std::set<std::string> seen(m.labeled_ids.begin(), m.labeled_ids.end());
    for (const auto& id : m.unlabeled_ids) CHECK(seen.insert(id).second);  // disjoint
    CHECK(seen.size() == 100);                                            // union preserved

    // deterministic in the seed
    DatasetManifest m2 = split_manifest("root", ids, 3, 0.25, 7);
    CHECK(m2.labeled_ids == m.labeled_ids);
    DatasetManifest m3 = split_manifest("root", ids, 3, 0.25, 8);
    CHECK(m3.labeled_ids != m.labeled_ids);

    CHECK_THROWS_WITH_AS(split_manifest("root", ids, 3, 0.0, 7), doctest::Contains("(0,1]"),
                         std::runtime_error);
}

TEST_CASE("manifest parsing is strict") {
    const auto dir = test_dir("manifest_strict");
    write_bytes(dir / "manifest.txt", "labeled a\n");
    CHECK_THROWS_WITH_AS(load_manifest(dir), doctest::Contains("num_classes must precede"),
                         std::runtime_error);

    write_bytes(dir / "manifest.txt", "num_classes 3\nfoo bar\n");
    CHECK_THROWS_WITH_AS(load_manifest(dir), doctest::Contains("unknown directive"),
                         std::runtime_error);

    write_bytes(dir / "manifest.txt", "num_classes 3\nnum_classes 3\n");
    CHECK_THROWS_WITH_AS(load_manifest(dir), doctest::Contains("duplicate num_classes"),
                         std::runtime_error);

    write_bytes(dir / "manifest.txt", "num_classes 3\nlabeled a b\n");
    CHECK_THROWS_WITH_AS(load_manifest(dir), doctest::Contains("trailing token"),
                         std::runtime_error);

    write_bytes(dir / "manifest.txt", "num_classes 1\n");
    CHECK_THROWS_WITH_AS(load_manifest(dir), doctest::Contains("out of range"),
                         std::runtime_error);

    write_bytes(dir / "manifest.txt", "num_classes 3\nlabeled a\nunlabeled a\n");
    CHECK_THROWS_WITH_AS(load_manifest(dir), doctest::Contains("duplicate id"),
                         std::runtime_error);

    write_bytes(dir / "manifest.txt", "num_classes 3\nlabeled ghost\n");
    CHECK_THROWS_WITH_AS(load_manifest(dir), doctest::Contains("missing rgb/depth"),
                         std::runtime_error);
}

TEST_CASE("scene generation is deterministic and classes are present") {
    SyntheticSceneSpec spec;
    spec.height = 64;
    spec.width = 64;
    spec.num_classes = 4;
    spec.seed = 99;

    GeneratedSample a = generate_scene(spec, 5);
    GeneratedSample b = generate_scene(spec, 5);
    CHECK(a.rgb.v == b.rgb.v);
    CHECK(a.depth_raw == b.depth_raw);
    CHECK(a.label.v == b.label.v);
    CHECK(a.instance.v == b.instance.v);

    GeneratedSample c = generate_scene(spec, 6);
    CHECK(a.rgb.v != c.rgb.v);

    int with_two_classes = 0;
    for (int i = 0; i < 100; ++i) {
        const GeneratedSample s = generate_scene(spec, i);
        std::set<std::int32_t> classes(s.label.v.begin(), s.label.v.end());
        if (classes.size() >= 2) with_two_classes++;
        for (auto v : s.label.v) {
            CHECK(v >= 0);
            CHECK(v < spec.num_classes);
        }
        // instances only where shapes were painted
        for (std::size_t p = 0; p < s.label.v.size(); ++p)
            CHECK((s.label.v[p] == 0) == (s.instance.v[p] == 0));
    }
    CHECK(with_two_classes >= 95);
}

TEST_CASE("shape classes occupy distinct depth bands") {
    SyntheticSceneSpec spec;
    spec.num_classes = 4;
    spec.depth_noise_std = 0.0;
    spec.seed = 3;
    // collect normalized depth per class over many scenes
    std::vector<double> lo(4, 1e9), hi(4, -1e9);
    for (int i = 0; i < 20; ++i) {
        const GeneratedSample s = generate_scene(spec, i);
        const ImageF d = normalize_depth(s.depth_raw, spec.height, spec.width);
        for (std::size_t p = 0; p < s.label.v.size(); ++p) {
            const int c = s.label.v[p];
            if (c == 0) continue;
            lo[std::size_t(c)] = std::min(lo[std::size_t(c)], double(d.v[p]));
            hi[std::size_t(c)] = std::max(hi[std::size_t(c)], double(d.v[p]));
        }
    }
    // bands are ordered and separated (centers 0.1, 0.45, 0.8 with +-0.06 jitter)
    for (int c = 1; c < 3; ++c) {
        if (hi[std::size_t(c)] < 0) continue;
        if (lo[std::size_t(c + 1)] > 1e8) continue;
        CHECK(hi[std::size_t(c)] < lo[std::size_t(c + 1)]);
    }
}

TEST_CASE("palette colors are distinct across classes") {
    const int K = 6;
    std::vector<std::array<float, 3>> cols;
    for (int c = 0; c < K; ++c) {
        float rgb[3];
        class_palette_color(c, K, rgb);
        for (float v : rgb) {
            CHECK(v >= 0.f);
            CHECK(v <= 1.f);
        }
        cols.push_back({rgb[0], rgb[1], rgb[2]});
    }
    for (int a = 0; a < K; ++a)
        for (int b = a + 1; b < K; ++b) {
            const double d2 = std::pow(cols[a][0] - cols[b][0], 2) +
                              std::pow(cols[a][1] - cols[b][1], 2) +
                              std::pow(cols[a][2] - cols[b][2], 2);
            CHECK(d2 > 1e-3);
        }
}

TEST_CASE("generated dataset loads back through the manifest") {
    const auto dir = test_dir("gen_dataset");
    SyntheticSceneSpec spec;
    spec.num_classes = 3;
    spec.labeled_fraction = 0.5;
    spec.seed = 21;
    DatasetManifest m = generate_synthetic_dataset(spec, 6, dir);
    CHECK(m.labeled_ids.size() == 3);
    CHECK(m.unlabeled_ids.size() == 3);

    DatasetManifest loaded = load_manifest(dir);
    CHECK(loaded.num_classes == 3);
    CHECK(loaded.labeled_ids == m.labeled_ids);
    CHECK(loaded.unlabeled_ids == m.unlabeled_ids);

    RawSample s = load_sample(loaded, loaded.labeled_ids[0], true);
    CHECK(s.rgb.c == 3);
    CHECK(s.rgb.h == 64);
    CHECK(s.depth.c == 1);
    CHECK_FALSE(s.label.empty());
    CHECK_FALSE(s.instance.empty());
    for (float v : s.depth.v) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }

    // missing label is an error only when required
    std::filesystem::remove(dir / "label" / (loaded.unlabeled_ids[0] + ".pgm"));
    CHECK_NOTHROW(load_sample(loaded, loaded.unlabeled_ids[0], false));
    CHECK_THROWS_WITH_AS(load_sample(loaded, loaded.unlabeled_ids[0], true),
                         doctest::Contains("missing label"), std::runtime_error);
}
