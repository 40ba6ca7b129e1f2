#include "tfgrasp/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "tfgrasp/errors.hpp"
#include "tfgrasp/image_io.hpp"
#include "tfgrasp/random.hpp"

namespace tfgrasp {
namespace {

constexpr double kPi = std::numbers::pi;

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

bool center_inside(const GraspRect& r, Index resolution) {
  return r.x >= 0 && r.y >= 0 && r.x <= resolution - 1 && r.y <= resolution - 1;
}

struct CropFrame {
  Index row0, col0, side;
  double scale;  // source pixels per output pixel
};

CropFrame crop_frame(Index rows, Index cols, Index crop, Index out) {
  const Index side = std::min({crop, rows, cols});
  return {(rows - side) / 2, (cols - side) / 2, side, static_cast<double>(side) / static_cast<double>(out)};
}

float sample_bilinear(const MapArray& src, double y, double x, Index r0, Index c0, Index r1, Index c1) {
  y = std::clamp(y, static_cast<double>(r0), static_cast<double>(r1));
  x = std::clamp(x, static_cast<double>(c0), static_cast<double>(c1));
  const Index y0 = static_cast<Index>(std::floor(y)), x0 = static_cast<Index>(std::floor(x));
  const Index y1 = std::min(y0 + 1, r1), x1 = std::min(x0 + 1, c1);
  const double fy = y - y0, fx = x - x0;
  if (fy == 0 && fx == 0) return src(y0, x0);
  const double top = src(y0, x0) * (1 - fx) + src(y0, x1) * fx;
  const double bottom = src(y1, x0) * (1 - fx) + src(y1, x1) * fx;
  return static_cast<float>(top * (1 - fy) + bottom * fy);
}

float sample_nearest(const MapArray& src, double y, double x, Index r0, Index c0, Index r1, Index c1) {
  const Index yi = std::clamp(static_cast<Index>(std::floor(y + 0.5)), r0, r1);
  const Index xi = std::clamp(static_cast<Index>(std::floor(x + 0.5)), c0, c1);
  return src(yi, xi);
}

Tensor<float> stack_channels(const std::vector<MapArray>& channels) {
  const Index h = channels.front().rows(), w = channels.front().cols();
  std::vector<float> values(static_cast<std::size_t>(channels.size() * h * w));
  for (std::size_t c = 0; c < channels.size(); ++c) std::copy_n(channels[c].data(), h * w, values.data() + c * h * w);
  return Tensor<float>(Shape{static_cast<Index>(channels.size()), h, w}, std::move(values));
}

MapArray channel_of(const Tensor<float>& image, Index c) {
  const Index h = image.dim(1), w = image.dim(2);
  MapArray m(h, w);
  std::copy_n(image.data().data() + c * h * w, h * w, m.data());
  return m;
}

bool has_depth(InputMode mode) { return mode != InputMode::kRgb; }
bool has_rgb(InputMode mode) { return mode != InputMode::kDepth; }

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

ParsedRects parse_rect_file(const std::string& text) {
  ParsedRects out;
  std::istringstream lines(text);
  std::string line;
  std::vector<Eigen::Vector2d> group;
  std::size_t line_no = 0, group_start = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    std::istringstream tokens(line);
    std::vector<std::string> parts;
    for (std::string t; tokens >> t;) parts.push_back(t);
    if (parts.empty()) continue;
    if (parts.size() != 2) {
      throw FormatError("rectangle file line " + std::to_string(line_no) + ": expected 'x y', got " +
                        std::to_string(parts.size()) + " tokens");
    }
    Eigen::Vector2d v;
    for (int k = 0; k < 2; ++k) {
      char* end = nullptr;
      v[k] = std::strtod(parts[k].c_str(), &end);
      if (end != parts[k].c_str() + parts[k].size()) {
        throw FormatError("rectangle file line " + std::to_string(line_no) + ": bad number '" + parts[k] + "'");
      }
    }
    if (group.empty()) group_start = line_no;
    group.push_back(v);
    if (group.size() < 4) continue;
    const bool finite = std::all_of(group.begin(), group.end(), [](const Eigen::Vector2d& p) { return p.allFinite(); });
    const Eigen::Vector2d e1 = group[1] - group[0];
    const Eigen::Vector2d e2 = group[2] - group[1];
    if (!finite || e1.norm() == 0 || e2.norm() == 0) {
      ++out.skipped;
    } else {
      const Eigen::Vector2d center = (group[0] + group[1] + group[2] + group[3]) / 4.0;
      out.rects.push_back(
          {center.x(), center.y(), normalize_angle(std::atan2(e1.y(), e1.x())), e1.norm(), e2.norm()});
    }
    group.clear();
  }
  if (!group.empty()) {
    throw FormatError("rectangle file line " + std::to_string(group_start) + ": incomplete rectangle (" +
                      std::to_string(group.size()) + " of 4 vertices)");
  }
  return out;
}

std::string format_rect_file(std::span<const GraspRect> rects) {
  std::string out;
  for (const auto& r : rects) {
    for (const auto& v : rect_vertices(r)) out += format_double(v.x()) + " " + format_double(v.y()) + "\n";
  }
  return out;
}

GraspMaps rasterize(std::span<const GraspRect> rects, Index resolution) {
  GraspMaps maps = GraspMaps::zeros(resolution, resolution);
  for (const auto& r : rects) {
    const double c = std::cos(r.theta), s = std::sin(r.theta);
    const double half_w = r.width / 2, half_h = r.height / 6;
    const double ex = std::abs(c) * half_w + std::abs(s) * half_h;
    const double ey = std::abs(s) * half_w + std::abs(c) * half_h;
    const Index r0 = std::max<Index>(0, static_cast<Index>(std::floor(r.y - ey)));
    const Index r1 = std::min<Index>(resolution - 1, static_cast<Index>(std::ceil(r.y + ey)));
    const Index c0 = std::max<Index>(0, static_cast<Index>(std::floor(r.x - ex)));
    const Index c1 = std::min<Index>(resolution - 1, static_cast<Index>(std::ceil(r.x + ex)));
    const Eigen::Vector2d code = encode_angle(r.theta);
    const float width = static_cast<float>(std::min(r.width, kMaxWidthPx) / kMaxWidthPx);
    for (Index row = r0; row <= r1; ++row) {
      for (Index col = c0; col <= c1; ++col) {
        const double dx = col - r.x, dy = row - r.y;
        const double u = dx * c + dy * s, v = -dx * s + dy * c;
        if (std::abs(u) > half_w || std::abs(v) > half_h) continue;
        maps.quality(row, col) = 1.0f;
        maps.cos2(row, col) = static_cast<float>(code.x());
        maps.sin2(row, col) = static_cast<float>(code.y());
        maps.width(row, col) = width;
      }
    }
  }
  return maps;
}

MapArray normalize(const MapArray& channel) {
  const Index n = channel.size();
  double sum = 0;
  for (Index i = 0; i < n; ++i) sum += channel.data()[i];
  const double mean = sum / static_cast<double>(n);
  double sq = 0;
  for (Index i = 0; i < n; ++i) {
    const double d = channel.data()[i] - mean;
    sq += d * d;
  }
  const double std_dev = std::max(std::sqrt(sq / static_cast<double>(n)), kNormalizeStdFloor);
  MapArray out(channel.rows(), channel.cols());
  for (Index i = 0; i < n; ++i) out.data()[i] = static_cast<float>((channel.data()[i] - mean) / std_dev);
  return out;
}

MapArray fill_depth(const MapArray& depth) {
  const Index h = depth.rows(), w = depth.cols();
  if (!depth.isFinite().any()) throw DataError("depth image has no finite pixel");
  MapArray out = depth;
  for (Index row = 0; row < h; ++row) {
    for (Index col = 0; col < w; ++col) {
      if (std::isfinite(depth(row, col))) continue;
      Index best_d2 = std::numeric_limits<Index>::max(), best = -1;
      auto consider = [&](Index y, Index x) {
        if (y < 0 || y >= h || x < 0 || x >= w || !std::isfinite(depth(y, x))) return;
        const Index d2 = (y - row) * (y - row) + (x - col) * (x - col);
        const Index idx = y * w + x;
        if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
          best_d2 = d2;
          best = idx;
        }
      };
      // Ring r holds the pixels at Chebyshev distance r, all with d^2 >= r^2.
      const Index max_r = std::max(h, w);
      for (Index r = 1; r <= max_r && r * r <= best_d2; ++r) {
        for (Index dy = -r; dy <= r; ++dy) {
          if (std::abs(dy) == r) {
            for (Index dx = -r; dx <= r; ++dx) consider(row + dy, col + dx);
          } else {
            consider(row + dy, col - r);
            consider(row + dy, col + r);
          }
        }
      }
      out(row, col) = depth.data()[best];
    }
  }
  return out;
}

MapArray crop_resize_nearest(const MapArray& src, Index crop, Index out) {
  const CropFrame f = crop_frame(src.rows(), src.cols(), crop, out);
  MapArray dst(out, out);
  for (Index r = 0; r < out; ++r) {
    for (Index c = 0; c < out; ++c) {
      dst(r, c) = sample_nearest(src, f.row0 + (r + 0.5) * f.scale - 0.5, f.col0 + (c + 0.5) * f.scale - 0.5, f.row0,
                                 f.col0, f.row0 + f.side - 1, f.col0 + f.side - 1);
    }
  }
  return dst;
}

MapArray crop_resize_bilinear(const MapArray& src, Index crop, Index out) {
  const CropFrame f = crop_frame(src.rows(), src.cols(), crop, out);
  MapArray dst(out, out);
  for (Index r = 0; r < out; ++r) {
    for (Index c = 0; c < out; ++c) {
      dst(r, c) = sample_bilinear(src, f.row0 + (r + 0.5) * f.scale - 0.5, f.col0 + (c + 0.5) * f.scale - 0.5, f.row0,
                                  f.col0, f.row0 + f.side - 1, f.col0 + f.side - 1);
    }
  }
  return dst;
}

GraspRect crop_resize_rect(const GraspRect& rect, Index rows, Index cols, Index crop, Index out) {
  const CropFrame f = crop_frame(rows, cols, crop, out);
  GraspRect r = rect;
  r.x = (rect.x - f.col0 + 0.5) / f.scale - 0.5;
  r.y = (rect.y - f.row0 + 0.5) / f.scale - 0.5;
  r.width = rect.width / f.scale;
  r.height = rect.height / f.scale;
  return r;
}

SampleRecord make_record(const RawScene& scene, InputMode mode, Index resolution, Index crop) {
  const auto fail = [&](const std::string& what) { throw DataError(scene.source + ": " + what); };
  if (has_rgb(mode) && scene.rgb.size() != 3) fail("input mode " + to_string(mode) + " needs an RGB image");
  if (has_depth(mode) && scene.depth.size() == 0) fail("input mode " + to_string(mode) + " needs a depth image");
  const MapArray& ref = has_rgb(mode) ? scene.rgb.front() : scene.depth;
  const Index rows = ref.rows(), cols = ref.cols();
  if (has_rgb(mode) && has_depth(mode) && (scene.depth.rows() != rows || scene.depth.cols() != cols)) {
    fail("RGB and depth sizes differ");
  }
  const bool resize = rows != resolution || cols != resolution;

  std::vector<MapArray> channels;
  if (has_rgb(mode)) {
    for (const auto& c : scene.rgb) {
      if (!c.isFinite().all()) fail("RGB image has non-finite pixels");
      channels.push_back(normalize(resize ? crop_resize_bilinear(c, crop, resolution) : c));
    }
  }
  if (has_depth(mode)) {
    MapArray filled;
    try {
      filled = fill_depth(scene.depth);
    } catch (const DataError& e) {
      fail(e.what());
    }
    channels.push_back(normalize(resize ? crop_resize_nearest(filled, crop, resolution) : filled));
  }

  SampleRecord rec;
  rec.mode = mode;
  rec.image = stack_channels(channels);
  for (const auto& r : scene.rects) {
    const GraspRect moved = resize ? crop_resize_rect(r, rows, cols, crop, resolution) : r;
    if (center_inside(moved, resolution)) rec.pos_rects.push_back(moved);
  }
  rec.targets = rasterize(rec.pos_rects, resolution);
  rec.object_id = scene.object_id;
  rec.source = scene.source;
  return rec;
}

AugmentParams draw_augment(std::uint64_t seed) {
  Rng rng(seed);
  AugmentParams p;
  p.quarter_turns = static_cast<int>(rng.below(4));
  p.zoom = rng.uniform(0.9, 1.1);
  return p;
}

Eigen::Vector2d augment_point(const Eigen::Vector2d& p, const AugmentParams& params, Index resolution) {
  const double c = (resolution - 1) / 2.0;
  Eigen::Vector2d d = p - Eigen::Vector2d(c, c);
  for (int k = 0; k < (params.quarter_turns & 3); ++k) d = Eigen::Vector2d(-d.y(), d.x());
  return Eigen::Vector2d(c, c) + params.zoom * d;
}

SampleRecord augment(const SampleRecord& record, const AugmentParams& requested) {
  const Index res = record.image.dim(-1);
  if (record.image.dim(-2) != res) throw ShapeError("augment needs a square image");
  const int turns = requested.quarter_turns & 3;

  auto move_rects = [&](const AugmentParams& p) {
    std::vector<GraspRect> moved;
    for (const auto& r : record.pos_rects) {
      const Eigen::Vector2d c = augment_point({r.x, r.y}, p, res);
      GraspRect m{c.x(), c.y(), normalize_angle(r.theta + turns * kPi / 2), r.width * p.zoom, r.height * p.zoom};
      if (center_inside(m, res)) moved.push_back(m);
    }
    return moved;
  };
  AugmentParams params{turns, requested.zoom};
  std::vector<GraspRect> rects = move_rects(params);
  if (rects.empty() && !record.pos_rects.empty()) {
    params.zoom = 1.0;
    rects = move_rects(params);
  }

  const double center = (res - 1) / 2.0;
  const Index channels = record.image.dim(0);
  std::vector<MapArray> out;
  for (Index ch = 0; ch < channels; ++ch) {
    const MapArray src = channel_of(record.image, ch);
    const bool depth = has_depth(record.mode) && ch == channels - 1;
    MapArray dst(res, res);
    for (Index row = 0; row < res; ++row) {
      for (Index col = 0; col < res; ++col) {
        // Inverse map: undo the zoom, then rotate back.
        Eigen::Vector2d d((col - center) / params.zoom, (row - center) / params.zoom);
        for (int k = 0; k < turns; ++k) d = Eigen::Vector2d(d.y(), -d.x());
        const double x = center + d.x(), y = center + d.y();
        dst(row, col) = depth ? sample_nearest(src, y, x, 0, 0, res - 1, res - 1)
                              : sample_bilinear(src, y, x, 0, 0, res - 1, res - 1);
      }
    }
    out.push_back(params.zoom == 1.0 ? std::move(dst) : normalize(dst));
  }

  SampleRecord result = record;
  result.image = stack_channels(out);
  result.pos_rects = std::move(rects);
  result.targets = rasterize(result.pos_rects, res);
  return result;
}

SampleRecord augment(const SampleRecord& record, std::uint64_t seed) { return augment(record, draw_augment(seed)); }

RawScene render_bar(const BarSpec& bar, const std::array<int, 3>& color, Index resolution) {
  constexpr int kBackground = 30;
  constexpr float kTableDepth = 0.70f;
  RawScene scene;
  scene.rgb.assign(3, MapArray::Constant(resolution, resolution, kBackground / 255.0f));
  scene.depth = MapArray::Constant(resolution, resolution, kTableDepth);
  const float top = kTableDepth - static_cast<float>(bar.thickness) / 1000.0f;
  const double c = std::cos(bar.angle), s = std::sin(bar.angle);
  for (Index row = 0; row < resolution; ++row) {
    for (Index col = 0; col < resolution; ++col) {
      const double dx = col - bar.cx, dy = row - bar.cy;
      if (std::abs(dx * c + dy * s) > bar.length / 2 || std::abs(-dx * s + dy * c) > bar.thickness / 2) continue;
      for (int k = 0; k < 3; ++k) scene.rgb[k](row, col) = color[k] / 255.0f;
      scene.depth(row, col) = top;
    }
  }
  const double grip = bar.thickness + 20;
  scene.rects.push_back({bar.cx, bar.cy, normalize_angle(bar.angle + kPi / 2), grip, grip / 2});
  return scene;
}

BarSpec draw_bar(std::uint64_t seed, std::size_t index, Index resolution) {
  std::seed_seq seq = make_seed_seq(seed, index);
  Rng rng(seq);
  BarSpec bar;
  bar.length = rng.uniform(60, 120);
  bar.thickness = rng.uniform(10, 30);
  bar.angle = normalize_angle(rng.uniform(-kPi / 2, kPi / 2));
  const double margin = bar.length / 2 + 2;
  bar.cx = rng.uniform(margin, resolution - 1 - margin);
  bar.cy = rng.uniform(margin, resolution - 1 - margin);
  return bar;
}

std::vector<RawScene> synth_scenes(std::size_t count, Index resolution, std::uint64_t seed) {
  if (count < 1) throw ContractError("synthetic scene count must be at least 1");
  if (resolution < 128) throw ConfigError("synthetic scenes need a resolution of at least 128");
  std::vector<RawScene> scenes;
  for (std::size_t i = 0; i < count; ++i) {
    const BarSpec bar = draw_bar(seed, i, resolution);
    std::seed_seq seq = make_seed_seq(~seed, i);
    Rng rng(seq);
    std::array<int, 3> color{};
    for (auto& c : color) c = 150 + static_cast<int>(rng.below(106));
    RawScene scene = render_bar(bar, color, resolution);
    const int length_bucket = std::min(3, static_cast<int>((bar.length - 60) / 15));
    const int thickness_bucket = std::min(3, static_cast<int>((bar.thickness - 10) / 5));
    scene.object_id = "bar-l" + std::to_string(length_bucket) + "-t" + std::to_string(thickness_bucket);
    scene.source = "synthetic:" + std::to_string(seed) + ":" + std::to_string(i);
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

std::vector<SampleRecord> synth_generate(std::size_t count, Index resolution, std::uint64_t seed, InputMode mode) {
  std::vector<SampleRecord> records;
  for (const auto& scene : synth_scenes(count, resolution, seed)) records.push_back(make_record(scene, mode, resolution));
  return records;
}

std::string to_string(SplitScheme scheme) { return scheme == SplitScheme::kImageWise ? "image_wise" : "object_wise"; }

SplitScheme parse_split_scheme(const std::string& text) {
  const std::string t = lower(text);
  if (t == "image" || t == "image_wise" || t == "iw") return SplitScheme::kImageWise;
  if (t == "object" || t == "object_wise" || t == "ow") return SplitScheme::kObjectWise;
  throw ConfigError("unknown split scheme '" + text + "' (expected image or object)");
}

Splits make_splits(std::span<const std::string> object_ids, SplitScheme scheme, int folds, std::uint64_t seed) {
  if (folds < 2) throw SplitError("need at least 2 folds, got " + std::to_string(folds));
  const std::size_t n = object_ids.size();
  Splits s;
  s.folds = folds;
  s.fold_of.assign(n, -1);
  s.members.assign(static_cast<std::size_t>(folds), {});
  Rng rng(seed);
  if (scheme == SplitScheme::kImageWise) {
    if (n < static_cast<std::size_t>(folds)) {
      throw SplitError(std::to_string(n) + " items cannot fill " + std::to_string(folds) + " folds");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t i = 0; i < n; ++i) s.fold_of[order[i]] = static_cast<int>(i % folds);
  } else {
    std::vector<std::string> ids;
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) {
      auto& g = groups[object_ids[i]];
      if (g.empty()) ids.push_back(object_ids[i]);
      g.push_back(i);
    }
    if (ids.size() < static_cast<std::size_t>(folds)) {
      throw SplitError(std::to_string(ids.size()) + " object groups cannot fill " + std::to_string(folds) + " folds");
    }
    rng.shuffle(ids);
    std::vector<std::size_t> sizes(static_cast<std::size_t>(folds), 0);
    for (const auto& id : ids) {
      const auto fold = static_cast<std::size_t>(std::min_element(sizes.begin(), sizes.end()) - sizes.begin());
      for (std::size_t i : groups[id]) s.fold_of[i] = static_cast<int>(fold);
      sizes[fold] += groups[id].size();
    }
  }
  for (std::size_t i = 0; i < n; ++i) s.members[static_cast<std::size_t>(s.fold_of[i])].push_back(i);
  return s;
}

std::vector<IndexEntry> read_index(const std::string& path) {
  const std::string text = read_file(path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    if (p.empty()) return p;
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? p : (base / fp).string();
  };
  std::vector<IndexEntry> entries;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() < 3 || cols.size() > 4 || cols[0].empty() || cols[1].empty()) {
      throw FormatError(path + " line " + std::to_string(line_no) + ": expected 3 or 4 tab-separated columns");
    }
    entries.push_back({resolve(cols[0]), resolve(cols[1]), cols[2], cols.size() == 4 ? resolve(cols[3]) : ""});
  }
  return entries;
}

std::string format_index(std::span<const IndexEntry> entries) {
  std::string out;
  for (const auto& e : entries) {
    out += e.image + "\t" + e.rects + "\t" + e.object_id;
    if (!e.depth.empty()) out += "\t" + e.depth;
    out += "\n";
  }
  return out;
}

MapArray read_depth(const std::string& path) {
  if (lower(std::filesystem::path(path).extension().string()) == ".f32raw") return read_f32raw(path);
  try {
    return parse_depth_text(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

RawScene load_scene(const IndexEntry& entry) {
  RawScene scene;
  scene.object_id = entry.object_id;
  scene.source = entry.image;
  auto guarded = [](const std::string& path, auto&& fn) {
    try {
      fn();
    } catch (const DataError&) {
      throw;
    } catch (const Error& e) {
      const std::string what = e.what();
      throw DataError(what.rfind(path, 0) == 0 ? what : path + ": " + what);
    }
  };
  guarded(entry.image, [&] {
    if (lower(std::filesystem::path(entry.image).extension().string()) == ".png") {
      scene.rgb = read_png(entry.image);
    } else {
      scene.depth = read_depth(entry.image);
    }
  });
  if (!entry.depth.empty()) guarded(entry.depth, [&] { scene.depth = read_depth(entry.depth); });
  guarded(entry.rects, [&] { scene.rects = parse_rect_file(read_file(entry.rects)).rects; });
  return scene;
}

std::vector<SampleRecord> load_dataset(const std::string& index_path, InputMode mode, Index resolution) {
  std::vector<SampleRecord> records;
  for (const auto& entry : read_index(index_path)) records.push_back(make_record(load_scene(entry), mode, resolution));
  return records;
}

void write_scenes(const std::string& dir, std::span<const RawScene> scenes) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  const std::filesystem::path base(dir);
  std::vector<IndexEntry> entries;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "scene_%04zu", i);
    const std::string s(stem);
    write_png((base / (s + ".png")).string(), scenes[i].rgb);
    write_f32raw((base / (s + ".f32raw")).string(), scenes[i].depth);
    write_file((base / (s + ".txt")).string(), format_rect_file(scenes[i].rects));
    entries.push_back({s + ".png", s + ".txt", scenes[i].object_id, s + ".f32raw"});
  }
  write_file((base / "index.tsv").string(), format_index(entries));
}

}  // namespace tfgrasp
