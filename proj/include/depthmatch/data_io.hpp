#pragma once

// Dataset loading, saving, synthesis, and split management.
//
// On-disk layout under a dataset root:
//   rgb/<id>.ppm       binary PPM, P6, maxval 255
//   depth/<id>.pgm     binary PGM, P5, maxval 65535, big-endian samples
//   label/<id>.pgm     binary PGM, P5, maxval 255; 255 = ignore
//   instance/<id>.pgm  optional; per-shape instance ids (0 = none)
//   manifest.txt       "num_classes <n>" header plus "labeled <id>" /
//                      "unlabeled <id>" lines
// Parsers are strict: malformed headers, short payloads, and trailing bytes
// are all errors.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "depthmatch/image.hpp"

namespace dm {

struct RawSample {
    std::string id;
    ImageF rgb;       // 3xHxW in [0,1]
    ImageF depth;     // 1xHxW in [0,1], per-image min-max normalized
    ImageI label;     // empty when no label file exists
    ImageI instance;  // empty when no instance file exists
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<std::string> labeled_ids;
    std::vector<std::string> unlabeled_ids;
    int num_classes = 0;
};

// Raw raster I/O. Readers validate magic, dimensions, maxval, payload size,
// and absence of trailing bytes.
ImageF read_ppm(const std::filesystem::path& path);                      // 3xHxW, /255
std::vector<std::uint16_t> read_pgm16(const std::filesystem::path& path, std::int64_t& h,
                                      std::int64_t& w);
ImageI read_pgm8(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const ImageF& rgb);    // clamps to [0,1]
void write_pgm16(const std::filesystem::path& path, const std::vector<std::uint16_t>& v,
                 std::int64_t h, std::int64_t w);
void write_pgm8(const std::filesystem::path& path, const ImageI& im);    // values must fit u8

// (d - min) / (max - min); a constant map yields all zeros.
ImageF normalize_depth(const std::vector<std::uint16_t>& raw, std::int64_t h, std::int64_t w);

DatasetManifest load_manifest(const std::filesystem::path& root);
void save_manifest(const DatasetManifest& m);

// Loads rgb + depth, plus label and instance maps when the files exist.
// require_label makes a missing label file an error.
RawSample load_sample(const DatasetManifest& m, const std::string& id, bool require_label);

// Deterministic shuffled split with |labeled| = round(fraction * |ids|).
DatasetManifest split_manifest(const std::filesystem::path& root, std::vector<std::string> ids,
                               int num_classes, double labeled_fraction, std::uint64_t seed);

// Synthetic scene generator.
//
// Scenes are geometric shapes (rectangles and disks) over a background whose
// depth is a fixed vertical ramp spanning almost the full [0,1] range. The
// ramp anchors per-image min-max depth normalization, so each class's depth
// band lands at a stable normalized value across images. Shape classes live
// in evenly spaced depth bands; shape color is drawn from the class palette,
// or, with probability color_ambiguity, from the palette of a uniformly
// random shape class (own class included), so at ambiguity 1 color carries no
// class information and depth is the only reliable cue.
struct SyntheticSceneSpec {
    std::int64_t height = 64, width = 64;  // both >= 64
    int num_classes = 4;                   // includes background class 0; >= 2
    int shapes_min = 2, shapes_max = 5;
    double color_ambiguity = 0.0;  // in [0,1]
    double noise_std = 0.02;       // rgb noise, [0,1] units
    double depth_noise_std = 0.005;
    std::uint64_t seed = 1;
    double labeled_fraction = 1.0;
    std::uint64_t split_seed = 1;

    void validate() const;
};

struct GeneratedSample {
    ImageF rgb;    // 3xHxW
    std::vector<std::uint16_t> depth_raw;
    ImageI label;
    ImageI instance;
};

GeneratedSample generate_scene(const SyntheticSceneSpec& spec, std::int64_t index);

// Writes count scenes plus a split manifest under out_root.
DatasetManifest generate_synthetic_dataset(const SyntheticSceneSpec& spec, std::int64_t count,
                                           const std::filesystem::path& out_root);

// The RGB palette color of a shape class (class ids 1..num_classes-1).
void class_palette_color(int cls, int num_classes, float rgb_out[3]);

}  // namespace dm
