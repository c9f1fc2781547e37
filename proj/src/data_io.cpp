#include "depthmatch/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace dm {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PNM primitives

namespace {

std::vector<char> read_file_bytes(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("cannot open file: " + path.string());
    f.seekg(0, std::ios::end);
    const auto n = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<char> buf(static_cast<std::size_t>(n));
    if (n > 0) f.read(buf.data(), n);
    if (!f) fail("read failure: " + path.string());
    return buf;
}

struct PnmHeader {
    std::string magic;
    std::int64_t w = 0, h = 0, maxval = 0;
    std::size_t payload_offset = 0;
};

bool pnm_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

// Header tokens are separated by whitespace; '#' starts a comment to end of
// line. The header ends with exactly one whitespace byte before the payload.
PnmHeader parse_pnm_header(const std::vector<char>& buf, const fs::path& path) {
    PnmHeader hd;
    std::size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < buf.size()) {
            if (pnm_space(buf[pos])) {
                pos++;
            } else if (buf[pos] == '#') {
                while (pos < buf.size() && buf[pos] != '\n') pos++;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < buf.size() && !pnm_space(buf[pos]) && buf[pos] != '#') pos++;
        if (start == pos) fail("malformed header (truncated): " + path.string());
        return std::string(buf.begin() + std::ptrdiff_t(start), buf.begin() + std::ptrdiff_t(pos));
    };
    auto next_int = [&](const char* what) -> std::int64_t {
        const std::string t = next_token();
        std::int64_t v = 0;
        for (char c : t) {
            if (c < '0' || c > '9') fail(strfmt("malformed header (%s): %s", what, path.string().c_str()));
            v = v * 10 + (c - '0');
            if (v > (std::int64_t(1) << 31)) fail(strfmt("malformed header (%s overflow): %s", what, path.string().c_str()));
        }
        return v;
    };
    hd.magic = next_token();
    hd.w = next_int("width");
    hd.h = next_int("height");
    hd.maxval = next_int("maxval");
    if (pos >= buf.size() || !pnm_space(buf[pos]))
        fail("malformed header (missing payload separator): " + path.string());
    hd.payload_offset = pos + 1;
    if (hd.w < 1 || hd.h < 1) fail("malformed header (non-positive size): " + path.string());
    return hd;
}

void check_payload(const std::vector<char>& buf, const PnmHeader& hd, std::size_t expect,
                   const fs::path& path) {
    const std::size_t have = buf.size() - hd.payload_offset;
    if (have < expect) fail("truncated payload: " + path.string());
    if (have > expect) fail("trailing garbage after payload: " + path.string());
}

}  // namespace

ImageF read_ppm(const fs::path& path) {
    const auto buf = read_file_bytes(path);
    const auto hd = parse_pnm_header(buf, path);
    if (hd.magic != "P6") fail("not a binary PPM (P6): " + path.string());
    if (hd.maxval != 255) fail("unsupported PPM maxval (expected 255): " + path.string());
    check_payload(buf, hd, std::size_t(hd.w * hd.h * 3), path);
    ImageF out(3, hd.h, hd.w);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + hd.payload_offset);
    for (std::int64_t y = 0; y < hd.h; ++y)
        for (std::int64_t x = 0; x < hd.w; ++x)
            for (std::int64_t ch = 0; ch < 3; ++ch)
                out.at(ch, y, x) = float(p[(y * hd.w + x) * 3 + ch]) / 255.f;
    return out;
}

std::vector<std::uint16_t> read_pgm16(const fs::path& path, std::int64_t& h, std::int64_t& w) {
    const auto buf = read_file_bytes(path);
    const auto hd = parse_pnm_header(buf, path);
    if (hd.magic != "P5") fail("not a binary PGM (P5): " + path.string());
    if (hd.maxval != 65535) fail("unsupported depth PGM maxval (expected 65535): " + path.string());
    check_payload(buf, hd, std::size_t(hd.w * hd.h * 2), path);
    h = hd.h;
    w = hd.w;
    std::vector<std::uint16_t> out(std::size_t(h * w));
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + hd.payload_offset);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::uint16_t((std::uint16_t(p[2 * i]) << 8) | p[2 * i + 1]);
    return out;
}

ImageI read_pgm8(const fs::path& path) {
    const auto buf = read_file_bytes(path);
    const auto hd = parse_pnm_header(buf, path);
    if (hd.magic != "P5") fail("not a binary PGM (P5): " + path.string());
    if (hd.maxval != 255) fail("unsupported label PGM maxval (expected 255): " + path.string());
    check_payload(buf, hd, std::size_t(hd.w * hd.h), path);
    ImageI out(hd.h, hd.w);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + hd.payload_offset);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = p[i];
    return out;
}

void write_ppm(const fs::path& path, const ImageF& rgb) {
    if (rgb.c != 3) fail("write_ppm: image must have 3 channels");
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("cannot create file: " + path.string());
    f << "P6\n" << rgb.w << " " << rgb.h << "\n255\n";
    std::vector<unsigned char> row(std::size_t(rgb.w * 3));
    for (std::int64_t y = 0; y < rgb.h; ++y) {
        for (std::int64_t x = 0; x < rgb.w; ++x)
            for (std::int64_t ch = 0; ch < 3; ++ch) {
                const float v = std::min(std::max(rgb.at(ch, y, x), 0.f), 1.f);
                row[std::size_t(x * 3 + ch)] = (unsigned char)std::lround(v * 255.f);
            }
        f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    if (!f) fail("write failure: " + path.string());
}

void write_pgm16(const fs::path& path, const std::vector<std::uint16_t>& v, std::int64_t h,
                 std::int64_t w) {
    if (std::int64_t(v.size()) != h * w) fail("write_pgm16: size mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("cannot create file: " + path.string());
    f << "P5\n" << w << " " << h << "\n65535\n";
    std::vector<unsigned char> bytes(v.size() * 2);
    for (std::size_t i = 0; i < v.size(); ++i) {
        bytes[2 * i] = (unsigned char)(v[i] >> 8);
        bytes[2 * i + 1] = (unsigned char)(v[i] & 0xff);
    }
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) fail("write failure: " + path.string());
}

void write_pgm8(const fs::path& path, const ImageI& im) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail("cannot create file: " + path.string());
    f << "P5\n" << im.w << " " << im.h << "\n255\n";
    std::vector<unsigned char> bytes(im.v.size());
    for (std::size_t i = 0; i < im.v.size(); ++i) {
        if (im.v[i] < 0 || im.v[i] > 255) fail("write_pgm8: value out of range for 8-bit PGM");
        bytes[i] = (unsigned char)im.v[i];
    }
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) fail("write failure: " + path.string());
}

ImageF normalize_depth(const std::vector<std::uint16_t>& raw, std::int64_t h, std::int64_t w) {
    if (std::int64_t(raw.size()) != h * w) fail("normalize_depth: size mismatch");
    std::uint16_t lo = raw[0], hi = raw[0];
    for (auto v : raw) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    ImageF out(1, h, w);
    if (hi == lo) return out;  // constant map -> zeros
    const float span = float(hi - lo);
    for (std::size_t i = 0; i < raw.size(); ++i) out.v[i] = float(raw[i] - lo) / span;
    return out;
}

// ---------------------------------------------------------------------------
// manifest

DatasetManifest load_manifest(const fs::path& root) {
    const fs::path mpath = root / "manifest.txt";
    std::ifstream f(mpath);
    if (!f) fail("cannot open manifest: " + mpath.string());
    DatasetManifest m;
    m.root = root;
    bool have_classes = false;
    std::string line;
    int lineno = 0;
    std::set<std::string> seen;
    while (std::getline(f, line)) {
        lineno++;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string kind, arg, extra;
        ss >> kind >> arg;
        if (ss >> extra) fail(strfmt("manifest line %d: unexpected trailing token", lineno));
        if (kind == "num_classes") {
            if (have_classes) fail(strfmt("manifest line %d: duplicate num_classes", lineno));
            try {
                m.num_classes = std::stoi(arg);
            } catch (...) {
                fail(strfmt("manifest line %d: bad num_classes value", lineno));
            }
            if (m.num_classes < 2 || m.num_classes > 254)
                fail(strfmt("manifest line %d: num_classes out of range [2,254]", lineno));
            have_classes = true;
        } else if (kind == "labeled" || kind == "unlabeled") {
            if (!have_classes) fail("manifest: num_classes must precede id lines");
            if (arg.empty()) fail(strfmt("manifest line %d: missing id", lineno));
            if (!seen.insert(arg).second)
                fail(strfmt("manifest line %d: duplicate id '%s'", lineno, arg.c_str()));
            (kind == "labeled" ? m.labeled_ids : m.unlabeled_ids).push_back(arg);
        } else {
            fail(strfmt("manifest line %d: unknown directive '%s'", lineno, kind.c_str()));
        }
    }
    if (!have_classes) fail("manifest: missing num_classes header");
    for (const auto& id : m.labeled_ids) {
        if (!fs::exists(root / "rgb" / (id + ".ppm")) || !fs::exists(root / "depth" / (id + ".pgm")))
            fail("manifest id missing rgb/depth files: " + id);
        if (!fs::exists(root / "label" / (id + ".pgm")))
            fail("labeled manifest id missing label file: " + id);
    }
    for (const auto& id : m.unlabeled_ids)
        if (!fs::exists(root / "rgb" / (id + ".ppm")) || !fs::exists(root / "depth" / (id + ".pgm")))
            fail("manifest id missing rgb/depth files: " + id);
    return m;
}

void save_manifest(const DatasetManifest& m) {
    std::ofstream f(m.root / "manifest.txt");
    if (!f) fail("cannot create manifest in " + m.root.string());
    f << "num_classes " << m.num_classes << "\n";
    for (const auto& id : m.labeled_ids) f << "labeled " << id << "\n";
    for (const auto& id : m.unlabeled_ids) f << "unlabeled " << id << "\n";
    if (!f) fail("write failure: manifest in " + m.root.string());
}

RawSample load_sample(const DatasetManifest& m, const std::string& id, bool require_label) {
    RawSample s;
    s.id = id;
    s.rgb = read_ppm(m.root / "rgb" / (id + ".ppm"));
    std::int64_t dh = 0, dw = 0;
    const auto raw = read_pgm16(m.root / "depth" / (id + ".pgm"), dh, dw);
    if (dh != s.rgb.h || dw != s.rgb.w)
        fail(strfmt("dimension mismatch between rgb (%lldx%lld) and depth (%lldx%lld) for id '%s'",
                    (long long)s.rgb.h, (long long)s.rgb.w, (long long)dh, (long long)dw,
                    id.c_str()));
    s.depth = normalize_depth(raw, dh, dw);
    const fs::path lpath = m.root / "label" / (id + ".pgm");
    if (fs::exists(lpath)) {
        s.label = read_pgm8(lpath);
        if (s.label.h != s.rgb.h || s.label.w != s.rgb.w)
            fail("dimension mismatch between rgb and label for id '" + id + "'");
        for (auto v : s.label.v)
            if (v != 255 && (v < 0 || v >= m.num_classes))
                fail(strfmt("label value %d out of range for %d classes in id '%s'", v,
                            m.num_classes, id.c_str()));
    } else if (require_label) {
        fail("missing label file for id '" + id + "'");
    }
    const fs::path ipath = m.root / "instance" / (id + ".pgm");
    if (fs::exists(ipath)) {
        s.instance = read_pgm8(ipath);
        if (s.instance.h != s.rgb.h || s.instance.w != s.rgb.w)
            fail("dimension mismatch between rgb and instance map for id '" + id + "'");
    }
    return s;
}

DatasetManifest split_manifest(const fs::path& root, std::vector<std::string> ids, int num_classes,
                               double labeled_fraction, std::uint64_t seed) {
    if (ids.empty()) fail("split_manifest: empty id list");
    if (!(labeled_fraction > 0.0) || labeled_fraction > 1.0)
        fail("split_manifest: labeled_fraction must be in (0,1]");
    Rng rng(derive_seed(seed, "split"));
    for (std::size_t i = ids.size(); i > 1; --i)
        std::swap(ids[i - 1], ids[std::size_t(rng.uniform_int(i))]);
    const std::size_t k = std::size_t(std::llround(labeled_fraction * double(ids.size())));
    DatasetManifest m;
    m.root = root;
    m.num_classes = num_classes;
    m.labeled_ids.assign(ids.begin(), ids.begin() + std::ptrdiff_t(std::min(k, ids.size())));
    m.unlabeled_ids.assign(ids.begin() + std::ptrdiff_t(std::min(k, ids.size())), ids.end());
    return m;
}

// ---------------------------------------------------------------------------
// synthetic scenes

void class_palette_color(int cls, int num_classes, float rgb_out[3]) {
    // evenly spaced hues, fixed saturation/value; background (class 0) is gray
    if (cls == 0) {
        rgb_out[0] = rgb_out[1] = rgb_out[2] = 0.45f;
        return;
    }
    const int shape_classes = num_classes - 1;
    const double hue = 360.0 * double(cls - 1) / double(shape_classes);
    const double s = 0.75, v = 0.85;
    const double c = v * s;
    const double hp = hue / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    rgb_out[0] = float(r + m);
    rgb_out[1] = float(g + m);
    rgb_out[2] = float(b + m);
}

namespace {

struct Shape {
    bool disk = false;
    int cls = 1;
    double depth = 0.5;
    double cy = 0, cx = 0;
    double ry = 0, rx = 0;  // half extents; disks use ry as radius
    float color[3] = {0, 0, 0};
};

}  // namespace

void SyntheticSceneSpec::validate() const {
    if (height < 64 || width < 64) fail("scene spec: height and width must be >= 64");
    if (num_classes < 2 || num_classes > 254)
        fail("scene spec: num_classes must lie in [2,254]");
    if (shapes_min < 1 || shapes_max < shapes_min)
        fail("scene spec: invalid shapes_per_image range");
    if (shapes_max > 200) fail("scene spec: shapes_max too large for instance id budget");
    if (color_ambiguity < 0 || color_ambiguity > 1)
        fail("scene spec: color_ambiguity must be in [0,1]");
    if (noise_std < 0 || depth_noise_std < 0)
        fail("scene spec: noise levels must be >= 0");
    if (labeled_fraction <= 0 || labeled_fraction > 1)
        fail("scene spec: labeled_fraction must lie in (0,1]");
}

GeneratedSample generate_scene(const SyntheticSceneSpec& spec, std::int64_t index) {
    spec.validate();

    const std::int64_t H = spec.height, W = spec.width;
    const int K = spec.num_classes;
    Rng rng(derive_seed(spec.seed, "scene", std::uint64_t(index)));

    GeneratedSample out;
    out.rgb = ImageF(3, H, W);
    out.label = ImageI(H, W, 0);
    out.instance = ImageI(H, W, 0);
    std::vector<double> depth(std::size_t(H * W));

    // background: gray color over a vertical depth ramp covering nearly the
    // whole unit range; the ramp pins per-image min-max normalization so the
    // class depth bands keep stable normalized positions
    float bg[3];
    class_palette_color(0, K, bg);
    for (std::int64_t y = 0; y < H; ++y) {
        const double d = 0.98 - 0.96 * double(y) / double(H - 1);
        for (std::int64_t x = 0; x < W; ++x) {
            depth[std::size_t(y * W + x)] = d;
            for (int ch = 0; ch < 3; ++ch) out.rgb.at(ch, y, x) = bg[ch];
        }
    }

    const int n_shapes = spec.shapes_min + int(rng.uniform_int(std::uint64_t(spec.shapes_max - spec.shapes_min + 1)));
    std::vector<Shape> shapes(static_cast<std::size_t>(n_shapes));
    const double base_size = 0.5 * double(std::min(H, W));
    for (auto& sh : shapes) {
        sh.cls = 1 + int(rng.uniform_int(std::uint64_t(K - 1)));
        const double band = 0.1 + double(sh.cls - 1) * 0.7 / double(K - 1);
        sh.depth = band + rng.uniform(-0.06, 0.06);
        sh.disk = rng.bernoulli(0.5);
        sh.cy = rng.uniform(0.12, 0.88) * double(H);
        sh.cx = rng.uniform(0.12, 0.88) * double(W);
        sh.ry = rng.uniform(0.16, 0.4) * base_size;
        sh.rx = sh.disk ? sh.ry : rng.uniform(0.16, 0.4) * base_size;
        int color_cls = sh.cls;
        if (rng.bernoulli(spec.color_ambiguity))
            color_cls = 1 + int(rng.uniform_int(std::uint64_t(K - 1)));
        class_palette_color(color_cls, K, sh.color);
        for (int ch = 0; ch < 3; ++ch)
            sh.color[ch] = std::min(std::max(sh.color[ch] + float(rng.uniform(-0.05, 0.05)), 0.f), 1.f);
    }

    // far-to-near painting so nearer shapes occlude
    std::vector<int> order(shapes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[std::size_t(i)] = int(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return shapes[std::size_t(a)].depth > shapes[std::size_t(b)].depth; });
    int instance_id = 0;
    for (int si : order) {
        const Shape& sh = shapes[std::size_t(si)];
        instance_id++;
        const std::int64_t y0 = std::max<std::int64_t>(0, std::int64_t(sh.cy - sh.ry));
        const std::int64_t y1 = std::min<std::int64_t>(H - 1, std::int64_t(sh.cy + sh.ry));
        const std::int64_t x0 = std::max<std::int64_t>(0, std::int64_t(sh.cx - sh.rx));
        const std::int64_t x1 = std::min<std::int64_t>(W - 1, std::int64_t(sh.cx + sh.rx));
        for (std::int64_t y = y0; y <= y1; ++y)
            for (std::int64_t x = x0; x <= x1; ++x) {
                if (sh.disk) {
                    const double dy = (double(y) - sh.cy) / sh.ry;
                    const double dx = (double(x) - sh.cx) / sh.rx;
                    if (dy * dy + dx * dx > 1.0) continue;
                }
                depth[std::size_t(y * W + x)] = sh.depth;
                out.label.at(y, x) = sh.cls;
                out.instance.at(y, x) = instance_id;
                for (int ch = 0; ch < 3; ++ch) out.rgb.at(ch, y, x) = sh.color[ch];
            }
    }

    for (auto& v : out.rgb.v)
        v = std::min(std::max(v + float(rng.normal(0.0, spec.noise_std)), 0.f), 1.f);
    out.depth_raw.resize(std::size_t(H * W));
    for (std::size_t i = 0; i < out.depth_raw.size(); ++i) {
        double d = depth[i] + rng.normal(0.0, spec.depth_noise_std);
        d = std::min(std::max(d, 0.001), 0.999);
        out.depth_raw[i] = std::uint16_t(std::lround(d * 65535.0));
    }
    return out;
}

DatasetManifest generate_synthetic_dataset(const SyntheticSceneSpec& spec, std::int64_t count,
                                           const fs::path& out_root) {
    if (count < 1) fail("generate_synthetic_dataset: count must be >= 1");
    fs::create_directories(out_root / "rgb");
    fs::create_directories(out_root / "depth");
    fs::create_directories(out_root / "label");
    fs::create_directories(out_root / "instance");
    std::vector<std::string> ids;
    for (std::int64_t i = 0; i < count; ++i) {
        const std::string id = strfmt("img_%05lld", (long long)i);
        const auto s = generate_scene(spec, i);
        write_ppm(out_root / "rgb" / (id + ".ppm"), s.rgb);
        write_pgm16(out_root / "depth" / (id + ".pgm"), s.depth_raw, spec.height, spec.width);
        write_pgm8(out_root / "label" / (id + ".pgm"), s.label);
        write_pgm8(out_root / "instance" / (id + ".pgm"), s.instance);
        ids.push_back(id);
    }
    DatasetManifest m = split_manifest(out_root, ids, spec.num_classes, spec.labeled_fraction,
                                       spec.split_seed);
    save_manifest(m);
    return m;
}

}  // namespace dm
