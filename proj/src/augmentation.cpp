#include "depthmatch/augmentation.hpp"

#include <algorithm>
#include <cmath>

namespace dm {

PatchMask sample_patch_mask(std::int64_t h, std::int64_t w, int ps, double rho, Rng& rng) {
    if (h < 1 || w < 1) fail("sample_patch_mask: empty image");
    if (ps < 1) fail("sample_patch_mask: patch size must be >= 1");
    if (rho < 0.0 || rho >= 1.0) fail("sample_patch_mask: masking ratio must be in [0,1)");
    PatchMask m;
    m.h = h;
    m.w = w;
    m.patch_size = ps;
    m.masking_ratio = rho;
    m.gh = (h + ps - 1) / ps;
    m.gw = (w + ps - 1) / ps;
    const std::int64_t cells = m.gh * m.gw;
    const std::int64_t k = std::llround(rho * double(cells));
    m.grid.assign(std::size_t(cells), 0);
    // partial Fisher-Yates: first k entries of a uniform permutation
    std::vector<std::int64_t> pool(static_cast<std::size_t>(cells));
    for (std::int64_t i = 0; i < cells; ++i) pool[std::size_t(i)] = i;
    for (std::int64_t i = 0; i < k; ++i) {
        const std::int64_t j = i + std::int64_t(rng.uniform_int(std::uint64_t(cells - i)));
        std::swap(pool[std::size_t(i)], pool[std::size_t(j)]);
        m.grid[std::size_t(pool[std::size_t(i)])] = 1;
    }
    return m;
}

ImageF cpma(const ImageF& rgb, const ImageF& depth, const PatchMask& mask) {
    if (rgb.c != 3) fail("cpma: rgb must have 3 channels");
    if (depth.c != 1) fail("cpma: depth must have 1 channel");
    if (rgb.h != depth.h || rgb.w != depth.w || rgb.h != mask.h || rgb.w != mask.w)
        fail(strfmt("cpma: spatial mismatch rgb %lldx%lld, depth %lldx%lld, mask %lldx%lld",
                    (long long)rgb.h, (long long)rgb.w, (long long)depth.h, (long long)depth.w,
                    (long long)mask.h, (long long)mask.w));
    ImageF out = rgb;
    for (std::int64_t y = 0; y < rgb.h; ++y)
        for (std::int64_t x = 0; x < rgb.w; ++x)
            if (mask.swapped_at(y, x)) {
                const float d = depth.at(0, y, x);
                out.at(0, y, x) = d;
                out.at(1, y, x) = d;
                out.at(2, y, x) = d;
            }
    return out;
}

// ---------------------------------------------------------------------------
// weak augmentation

namespace {

template <typename Img, typename Fill>
Img place(const Img& scaled, const GeometryLog& g, std::int64_t out_h, std::int64_t out_w,
          Fill fill) {
    Img out;
    if constexpr (std::is_same_v<Img, ImageF>) {
        out = ImageF(scaled.c, out_h, out_w, fill);
    } else {
        out = ImageI(out_h, out_w, fill);
    }
    const std::int64_t copy_h = std::min(scaled.h - g.src_y, out_h - g.dst_y);
    const std::int64_t copy_w = std::min(scaled.w - g.src_x, out_w - g.dst_x);
    for (std::int64_t y = 0; y < copy_h; ++y)
        for (std::int64_t x = 0; x < copy_w; ++x) {
            if constexpr (std::is_same_v<Img, ImageF>) {
                for (std::int64_t ch = 0; ch < scaled.c; ++ch)
                    out.at(ch, g.dst_y + y, g.dst_x + x) = scaled.at(ch, g.src_y + y, g.src_x + x);
            } else {
                out.at(g.dst_y + y, g.dst_x + x) = scaled.at(g.src_y + y, g.src_x + x);
            }
        }
    return out;
}

}  // namespace

ImageF apply_geometry(const ImageF& im, const GeometryLog& g, float fill) {
    const std::int64_t H = im.h, W = im.w;
    ImageF t = g.flip ? hflip(im) : im;
    t = resize_bilinear(t, g.scaled_h, g.scaled_w);
    return place(t, g, H, W, fill);
}

ImageI apply_geometry(const ImageI& im, const GeometryLog& g, std::int32_t fill) {
    const std::int64_t H = im.h, W = im.w;
    ImageI t = g.flip ? hflip(im) : im;
    t = resize_nearest(t, g.scaled_h, g.scaled_w);
    return place(t, g, H, W, fill);
}

WeakView weak_augment(const RawSample& s, const WeakAugmentConfig& cfg, Rng& rng) {
    const std::int64_t H = s.rgb.h, W = s.rgb.w;
    GeometryLog g;
    g.flip = rng.bernoulli(cfg.flip_prob);
    g.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
    g.scaled_h = std::max<std::int64_t>(1, std::llround(double(H) * g.scale));
    g.scaled_w = std::max<std::int64_t>(1, std::llround(double(W) * g.scale));
    // per axis: crop when the scaled image is larger, pad placement when smaller
    if (g.scaled_h >= H) {
        g.src_y = std::int64_t(rng.uniform_int(std::uint64_t(g.scaled_h - H + 1)));
        g.dst_y = 0;
    } else {
        g.src_y = 0;
        g.dst_y = std::int64_t(rng.uniform_int(std::uint64_t(H - g.scaled_h + 1)));
    }
    if (g.scaled_w >= W) {
        g.src_x = std::int64_t(rng.uniform_int(std::uint64_t(g.scaled_w - W + 1)));
        g.dst_x = 0;
    } else {
        g.src_x = 0;
        g.dst_x = std::int64_t(rng.uniform_int(std::uint64_t(W - g.scaled_w + 1)));
    }

    WeakView v;
    v.geo = g;
    v.rgb = apply_geometry(s.rgb, g, 0.f);
    v.depth = apply_geometry(s.depth, g, 0.f);
    if (!s.label.empty()) v.label = apply_geometry(s.label, g, 255);
    if (!s.instance.empty()) v.instance = apply_geometry(s.instance, g, 0);
    return v;
}

// ---------------------------------------------------------------------------
// strong augmentation

namespace {

float luma(const ImageF& im, std::int64_t y, std::int64_t x) {
    return 0.299f * im.at(0, y, x) + 0.587f * im.at(1, y, x) + 0.114f * im.at(2, y, x);
}

float clamp01(float v) { return std::min(std::max(v, 0.f), 1.f); }

std::int64_t reflect(std::int64_t i, std::int64_t n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

}  // namespace

ImageF color_jitter(const ImageF& rgb, double brightness, double contrast, double saturation) {
    if (rgb.c != 3) fail("color_jitter: rgb must have 3 channels");
    ImageF out = rgb;
    for (auto& v : out.v) v = clamp01(v * float(brightness));
    double gray_mean = 0.0;
    for (std::int64_t y = 0; y < out.h; ++y)
        for (std::int64_t x = 0; x < out.w; ++x) gray_mean += luma(out, y, x);
    gray_mean /= double(out.h * out.w);
    for (auto& v : out.v) v = clamp01((v - float(gray_mean)) * float(contrast) + float(gray_mean));
    for (std::int64_t y = 0; y < out.h; ++y)
        for (std::int64_t x = 0; x < out.w; ++x) {
            const float l = luma(out, y, x);
            for (std::int64_t ch = 0; ch < 3; ++ch)
                out.at(ch, y, x) = clamp01((out.at(ch, y, x) - l) * float(saturation) + l);
        }
    return out;
}

ImageF to_grayscale(const ImageF& rgb) {
    if (rgb.c != 3) fail("to_grayscale: rgb must have 3 channels");
    ImageF out(3, rgb.h, rgb.w);
    for (std::int64_t y = 0; y < rgb.h; ++y)
        for (std::int64_t x = 0; x < rgb.w; ++x) {
            const float l = luma(rgb, y, x);
            out.at(0, y, x) = l;
            out.at(1, y, x) = l;
            out.at(2, y, x) = l;
        }
    return out;
}

ImageF gaussian_blur(const ImageF& im, double sigma) {
    if (sigma <= 0.0) fail("gaussian_blur: sigma must be positive");
    const int r = int(std::ceil(2.5 * sigma));
    std::vector<float> k(std::size_t(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        const double wgt = std::exp(-double(i * i) / (2.0 * sigma * sigma));
        k[std::size_t(i + r)] = float(wgt);
        sum += wgt;
    }
    for (auto& v : k) v = float(double(v) / sum);

    // separable passes with reflective padding
    ImageF tmp(im.c, im.h, im.w);
    for (std::int64_t ch = 0; ch < im.c; ++ch)
        for (std::int64_t y = 0; y < im.h; ++y)
            for (std::int64_t x = 0; x < im.w; ++x) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i)
                    acc += double(k[std::size_t(i + r)]) * im.at(ch, y, reflect(x + i, im.w));
                tmp.at(ch, y, x) = float(acc);
            }
    ImageF out(im.c, im.h, im.w);
    for (std::int64_t ch = 0; ch < im.c; ++ch)
        for (std::int64_t y = 0; y < im.h; ++y)
            for (std::int64_t x = 0; x < im.w; ++x) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i)
                    acc += double(k[std::size_t(i + r)]) * tmp.at(ch, reflect(y + i, im.h), x);
                out.at(ch, y, x) = float(acc);
            }
    return out;
}

StrongView strong_augment(const WeakView& weak, const StrongAugmentConfig& cfg, Rng& rng) {
    StrongView v;
    v.rgb = weak.rgb;
    if (rng.bernoulli(cfg.jitter_prob)) {
        const double b = rng.uniform(cfg.jitter_min, cfg.jitter_max);
        const double c = rng.uniform(cfg.jitter_min, cfg.jitter_max);
        const double s = rng.uniform(cfg.jitter_min, cfg.jitter_max);
        v.rgb = color_jitter(v.rgb, b, c, s);
    }
    if (rng.bernoulli(cfg.grayscale_prob)) v.rgb = to_grayscale(v.rgb);
    if (rng.bernoulli(cfg.blur_prob)) {
        const double sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
        v.rgb = gaussian_blur(v.rgb, sigma);
    }
    if (cfg.use_cpma) {
        v.mask = sample_patch_mask(v.rgb.h, v.rgb.w, cfg.cpma_patch_size, cfg.masking_ratio, rng);
        v.rgb = cpma(v.rgb, weak.depth, v.mask);
        v.cpma_applied = true;
    }
    return v;
}

}  // namespace dm
