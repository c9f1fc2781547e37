#pragma once

// Raw image containers used by the data pipeline and augmentations.
// Float images are planar CHW so they copy straight into tensors; integer
// images hold label and instance maps.

#include <cstdint>
#include <vector>

#include "depthmatch/common.hpp"

namespace dm {

struct ImageF {
    std::int64_t c = 0, h = 0, w = 0;
    std::vector<float> v;

    ImageF() = default;
    ImageF(std::int64_t c_, std::int64_t h_, std::int64_t w_, float fill = 0.f)
        : c(c_), h(h_), w(w_), v(std::size_t(c_ * h_ * w_), fill) {}

    bool empty() const { return v.empty(); }
    float& at(std::int64_t ch, std::int64_t y, std::int64_t x) {
        return v[std::size_t((ch * h + y) * w + x)];
    }
    float at(std::int64_t ch, std::int64_t y, std::int64_t x) const {
        return v[std::size_t((ch * h + y) * w + x)];
    }
};

struct ImageI {
    std::int64_t h = 0, w = 0;
    std::vector<std::int32_t> v;

    ImageI() = default;
    ImageI(std::int64_t h_, std::int64_t w_, std::int32_t fill = 0)
        : h(h_), w(w_), v(std::size_t(h_ * w_), fill) {}

    bool empty() const { return v.empty(); }
    std::int32_t& at(std::int64_t y, std::int64_t x) { return v[std::size_t(y * w + x)]; }
    std::int32_t at(std::int64_t y, std::int64_t x) const { return v[std::size_t(y * w + x)]; }
};

// align-corners=false: source center (o + 0.5) * in/out - 0.5, clamped to the
// valid range. Matches the tensor-level resize so replayed geometry agrees.
inline ImageF resize_bilinear(const ImageF& im, std::int64_t oh, std::int64_t ow) {
    if (oh < 1 || ow < 1) fail("resize_bilinear: output size must be >= 1");
    if (im.h == oh && im.w == ow) return im;
    ImageF out(im.c, oh, ow);
    for (std::int64_t oy = 0; oy < oh; ++oy) {
        double sy = (double(oy) + 0.5) * double(im.h) / double(oh) - 0.5;
        sy = std::min(std::max(sy, 0.0), double(im.h - 1));
        const std::int64_t y0 = std::int64_t(sy);
        const std::int64_t y1 = std::min(y0 + 1, im.h - 1);
        const double wy = sy - double(y0);
        for (std::int64_t ox = 0; ox < ow; ++ox) {
            double sx = (double(ox) + 0.5) * double(im.w) / double(ow) - 0.5;
            sx = std::min(std::max(sx, 0.0), double(im.w - 1));
            const std::int64_t x0 = std::int64_t(sx);
            const std::int64_t x1 = std::min(x0 + 1, im.w - 1);
            const double wx = sx - double(x0);
            for (std::int64_t ch = 0; ch < im.c; ++ch) {
                const double v = (1 - wy) * ((1 - wx) * im.at(ch, y0, x0) + wx * im.at(ch, y0, x1)) +
                                 wy * ((1 - wx) * im.at(ch, y1, x0) + wx * im.at(ch, y1, x1));
                out.at(ch, oy, ox) = float(v);
            }
        }
    }
    return out;
}

// nearest neighbor on the same sample grid as resize_bilinear
inline ImageI resize_nearest(const ImageI& im, std::int64_t oh, std::int64_t ow) {
    if (oh < 1 || ow < 1) fail("resize_nearest: output size must be >= 1");
    if (im.h == oh && im.w == ow) return im;
    ImageI out(oh, ow);
    for (std::int64_t oy = 0; oy < oh; ++oy) {
        double sy = (double(oy) + 0.5) * double(im.h) / double(oh) - 0.5;
        std::int64_t y = std::int64_t(std::llround(sy));
        y = std::min(std::max<std::int64_t>(y, 0), im.h - 1);
        for (std::int64_t ox = 0; ox < ow; ++ox) {
            double sx = (double(ox) + 0.5) * double(im.w) / double(ow) - 0.5;
            std::int64_t x = std::int64_t(std::llround(sx));
            x = std::min(std::max<std::int64_t>(x, 0), im.w - 1);
            out.at(oy, ox) = im.at(y, x);
        }
    }
    return out;
}

inline ImageF hflip(const ImageF& im) {
    ImageF out(im.c, im.h, im.w);
    for (std::int64_t ch = 0; ch < im.c; ++ch)
        for (std::int64_t y = 0; y < im.h; ++y)
            for (std::int64_t x = 0; x < im.w; ++x) out.at(ch, y, x) = im.at(ch, y, im.w - 1 - x);
    return out;
}

inline ImageI hflip(const ImageI& im) {
    ImageI out(im.h, im.w);
    for (std::int64_t y = 0; y < im.h; ++y)
        for (std::int64_t x = 0; x < im.w; ++x) out.at(y, x) = im.at(y, im.w - 1 - x);
    return out;
}

}  // namespace dm
