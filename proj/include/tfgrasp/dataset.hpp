#pragma once

// Sample ingestion: rectangle label files, target rasterization, per-channel
// normalization, depth hole filling, label-consistent augmentation,
// synthetic bar scenes and cross-validation splits.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tfgrasp/geometry.hpp"
#include "tfgrasp/model.hpp"

namespace tfgrasp {

inline constexpr Index kDefaultResolution = 224;
inline constexpr Index kCornellCrop = 351;
inline constexpr double kNormalizeStdFloor = 1e-6;

struct SampleRecord {
  InputMode mode = InputMode::kRgbd;
  // [C_in, R, R], normalized per channel. RGB channels precede depth.
  Tensor<float> image;
  std::vector<GraspRect> pos_rects;
  GraspMaps targets;
  std::string object_id;
  std::string source;
};

struct ParsedRects {
  std::vector<GraspRect> rects;
  // Four-line groups dropped for containing a non-finite value.
  std::size_t skipped = 0;
};

// Lines of "x y" vertex pairs, four per rectangle. Blank lines are ignored.
ParsedRects parse_rect_file(const std::string& text);
// Inverse of parse_rect_file for finite rectangles (shortest round-trip
// decimal form).
std::string format_rect_file(std::span<const GraspRect> rects);

// Paints the full-width, middle-third-height band of each rectangle; later
// rectangles overwrite earlier ones.
GraspMaps rasterize(std::span<const GraspRect> rects, Index resolution);

// Mean 0 and std 1 (population std floored at kNormalizeStdFloor).
MapArray normalize(const MapArray& channel);

// Replaces non-finite pixels by the nearest finite pixel (Euclidean, ties
// to the lowest row-major index). Throws DataError when none is finite.
MapArray fill_depth(const MapArray& depth);

// Nearest and bilinear resampling of a centered square crop of side
// min(crop, rows, cols) to out x out (pixel centers aligned).
MapArray crop_resize_nearest(const MapArray& src, Index crop, Index out);
MapArray crop_resize_bilinear(const MapArray& src, Index crop, Index out);
// Maps a rectangle into the crop_resize frame.
GraspRect crop_resize_rect(const GraspRect& rect, Index rows, Index cols, Index crop, Index out);

// Raw channels of one scene before normalization.
struct RawScene {
  std::vector<MapArray> rgb;  // three channels in [0, 1], or empty
  MapArray depth;             // empty when absent
  std::vector<GraspRect> rects;
  std::string object_id;
  std::string source;
};

// Fills depth, crops/resizes to `resolution` (identity when already that
// size), keeps rectangles whose center lies inside the frame, normalizes
// the channels `mode` needs and rasterizes the targets.
SampleRecord make_record(const RawScene& scene, InputMode mode, Index resolution = kDefaultResolution,
                         Index crop = kCornellCrop);

struct AugmentParams {
  int quarter_turns = 0;  // 0..3, clockwise on screen
  double zoom = 1.0;      // [0.9, 1.1]
};
AugmentParams draw_augment(std::uint64_t seed);
// Rotates by quarter turns and zooms about the image center; the image is
// resampled (bilinear for RGB, nearest for depth, edge clamped) and
// renormalized, rectangles move with it and targets are re-rasterized.
// A zoom that pushes every rectangle center out of frame falls back to 1.
SampleRecord augment(const SampleRecord& record, const AugmentParams& params);
SampleRecord augment(const SampleRecord& record, std::uint64_t seed);
// Point map used by augment, (x, y) in pixels.
Eigen::Vector2d augment_point(const Eigen::Vector2d& p, const AugmentParams& params, Index resolution);

struct BarSpec {
  double cx = 0, cy = 0;
  double length = 0, thickness = 0;
  double angle = 0;
};

// One bright bar on a dark table, RGB quantized to 8 bits, depth in meters.
RawScene render_bar(const BarSpec& bar, const std::array<int, 3>& color, Index resolution);
// Scene `index` of the stream for `seed`.
BarSpec draw_bar(std::uint64_t seed, std::size_t index, Index resolution);
std::vector<RawScene> synth_scenes(std::size_t count, Index resolution, std::uint64_t seed);
std::vector<SampleRecord> synth_generate(std::size_t count, Index resolution, std::uint64_t seed,
                                         InputMode mode = InputMode::kRgbd);

enum class SplitScheme { kImageWise, kObjectWise };
std::string to_string(SplitScheme scheme);
// Accepts "image", "image_wise", "iw", "object", "object_wise", "ow".
SplitScheme parse_split_scheme(const std::string& text);

struct Splits {
  int folds = 0;
  std::vector<int> fold_of;                     // per item
  std::vector<std::vector<std::size_t>> members;  // per fold, ascending
};

// image_wise: seeded shuffle, round-robin. object_wise: groups by id,
// shuffles groups, assigns each to the currently smallest fold (ties to the
// lowest fold). Throws SplitError for folds < 2 or too few items/groups.
Splits make_splits(std::span<const std::string> object_ids, SplitScheme scheme, int folds, std::uint64_t seed);

// Index file: one sample per line, tab-separated "image rects object_id
// [depth]". `image` is a PNG (RGB) or a depth raster (.f32raw or text);
// the optional fourth column adds a depth raster to an RGB image. Relative
// paths resolve against the index file's directory. '#' starts a comment.
struct IndexEntry {
  std::string image;
  std::string rects;
  std::string object_id;
  std::string depth;
};
std::vector<IndexEntry> read_index(const std::string& path);
std::string format_index(std::span<const IndexEntry> entries);

// Reads a depth raster from .f32raw or whitespace text.
MapArray read_depth(const std::string& path);
// Loads one entry's files; errors carry the offending path.
RawScene load_scene(const IndexEntry& entry);
std::vector<SampleRecord> load_dataset(const std::string& index_path, InputMode mode,
                                       Index resolution = kDefaultResolution);

// Writes scenes as <dir>/scene_NNNN.png, .f32raw, .txt plus <dir>/index.tsv.
void write_scenes(const std::string& dir, std::span<const RawScene> scenes);

}  // namespace tfgrasp
