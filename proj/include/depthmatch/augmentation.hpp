#pragma once

// Weak and strong augmentation over RGB-D samples.
//
// Weak augmentation is geometric (flip, scale, crop/pad back to the original
// size) and applies identically to rgb, depth, label, and instance maps; the
// applied geometry is recorded so it can be replayed. Strong augmentation is
// purely photometric (color jitter, grayscale, Gaussian blur) followed by
// CPMA patch swapping, so pixel geometry never changes between the weak and
// strong views of a sample.

#include <cstdint>
#include <vector>

#include "depthmatch/data_io.hpp"
#include "depthmatch/image.hpp"

namespace dm {

// Complementary patch mask over a cell grid. Edge cells smaller than
// ps x ps are legal cells. grid true = swapped (depth pasted into rgb).
struct PatchMask {
    std::int64_t h = 0, w = 0;
    std::int64_t gh = 0, gw = 0;
    int patch_size = 0;
    double masking_ratio = 0.0;
    std::vector<std::uint8_t> grid;

    bool cell(std::int64_t cy, std::int64_t cx) const {
        return grid[std::size_t(cy * gw + cx)] != 0;
    }
    bool swapped_at(std::int64_t y, std::int64_t x) const {
        return cell(y / patch_size, x / patch_size);
    }
    std::int64_t swapped_cells() const {
        std::int64_t n = 0;
        for (auto v : grid) n += v;
        return n;
    }
};

// Selects exactly round(rho * cells) cells uniformly without replacement.
PatchMask sample_patch_mask(std::int64_t h, std::int64_t w, int ps, double rho, Rng& rng);

// rgb where the cell is kept; depth replicated across the 3 channels where
// the cell is swapped. Values are copied bit-exactly.
ImageF cpma(const ImageF& rgb, const ImageF& depth, const PatchMask& mask);

// Record of the geometric transform applied by weak augmentation. Per axis,
// either a crop from the scaled image (scaled extent >= output) or a padded
// placement (scaled extent < output; the fill covers the rest).
struct GeometryLog {
    bool flip = false;
    double scale = 1.0;
    std::int64_t scaled_h = 0, scaled_w = 0;
    std::int64_t src_y = 0, src_x = 0;  // crop origin within the scaled image
    std::int64_t dst_y = 0, dst_x = 0;  // placement origin within the output
};

struct WeakAugmentConfig {
    double flip_prob = 0.5;
    double scale_min = 0.5;
    double scale_max = 2.0;
};

struct WeakView {
    ImageF rgb;
    ImageF depth;
    ImageI label;     // empty if the source had none; fill value 255
    ImageI instance;  // empty if the source had none; fill value 0
    GeometryLog geo;
};

// Replays a geometry log on any image; weak_augment itself goes through
// these, so the log is exact by construction.
ImageF apply_geometry(const ImageF& im, const GeometryLog& g, float fill);
ImageI apply_geometry(const ImageI& im, const GeometryLog& g, std::int32_t fill);

WeakView weak_augment(const RawSample& s, const WeakAugmentConfig& cfg, Rng& rng);

struct StrongAugmentConfig {
    double jitter_prob = 0.8;  // gates brightness/contrast/saturation jointly
    double jitter_min = 0.5, jitter_max = 1.5;
    double grayscale_prob = 0.2;
    double blur_prob = 0.5;
    double blur_sigma_min = 0.1, blur_sigma_max = 2.0;
    bool use_cpma = true;
    int cpma_patch_size = 32;
    double masking_ratio = 0.1;
};

struct StrongView {
    ImageF rgb;
    bool cpma_applied = false;
    PatchMask mask;  // meaningful only when cpma_applied
};

// Photometric ops in order: jitter (brightness, contrast, saturation, each
// with a factor in [jitter_min, jitter_max], clamped to [0,1] after each),
// grayscale, Gaussian blur with reflective padding, then CPMA. Depth and
// labels of the weak view remain valid for the strong view.
StrongView strong_augment(const WeakView& weak, const StrongAugmentConfig& cfg, Rng& rng);

// Exposed for direct testing.
ImageF color_jitter(const ImageF& rgb, double brightness, double contrast, double saturation);
ImageF to_grayscale(const ImageF& rgb);
ImageF gaussian_blur(const ImageF& im, double sigma);

}  // namespace dm
