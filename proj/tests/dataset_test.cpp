#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <numbers>
#include <set>

#include "tfgrasp/dataset.hpp"
#include "tfgrasp/image_io.hpp"
#include "tfgrasp/random.hpp"

namespace tfgrasp {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr float kNan = std::numeric_limits<float>::quiet_NaN();

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("tfgrasp_dataset_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

TEST(ParseRects, Examples) {
  EXPECT_TRUE(parse_rect_file("").rects.empty());
  const auto square = parse_rect_file("0 0\n2 0\n2 2\n0 2\n");
  ASSERT_EQ(square.rects.size(), 1u);
  const GraspRect r = square.rects[0];
  EXPECT_DOUBLE_EQ(r.x, 1);
  EXPECT_DOUBLE_EQ(r.y, 1);
  EXPECT_DOUBLE_EQ(r.theta, 0);
  EXPECT_DOUBLE_EQ(r.width, 2);
  EXPECT_DOUBLE_EQ(r.height, 2);
  EXPECT_EQ(parse_rect_file("0 0\n2 0\n2 2\n0 2\n\n5 5\n9 5\n9 7\n5 7\n").rects.size(), 2u);
}

TEST(ParseRects, NonFiniteGroupsAreSkipped) {
  const auto parsed = parse_rect_file("0 0\n2 0\n2 2\n0 2\nnan 1\n2 0\n2 2\n0 2\n");
  EXPECT_EQ(parsed.rects.size(), 1u);
  EXPECT_EQ(parsed.skipped, 1u);
}

TEST(ParseRects, Errors) {
  try {
    parse_rect_file("0 0\n2 0\n2 2\n0 2\n1 1\n");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 5"), std::string::npos);
  }
  try {
    parse_rect_file("0 0\n2 x\n");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_rect_file("1 2 3\n"), FormatError);
}

TEST(ParseRects, FormatRoundTrip) {
  Rng rng(1);
  std::vector<GraspRect> rects;
  for (int i = 0; i < 10; ++i) {
    rects.push_back({rng.uniform(20, 200), rng.uniform(20, 200), normalize_angle(rng.uniform(-1.5, 1.5)),
                     rng.uniform(10, 80), rng.uniform(5, 40)});
  }
  const auto back = parse_rect_file(format_rect_file(rects)).rects;
  ASSERT_EQ(back.size(), rects.size());
  for (std::size_t i = 0; i < rects.size(); ++i) {
    EXPECT_NEAR(back[i].x, rects[i].x, 1e-9);
    EXPECT_NEAR(back[i].y, rects[i].y, 1e-9);
    EXPECT_NEAR(angle_distance(back[i].theta, rects[i].theta), 0, 1e-9);
    EXPECT_NEAR(back[i].width, rects[i].width, 1e-9);
    EXPECT_NEAR(back[i].height, rects[i].height, 1e-9);
  }
  // Maps rasterized from the serialized rectangles agree at painted pixels.
  const GraspMaps a = rasterize(rects, 224), b = rasterize(back, 224);
  for (Index i = 0; i < a.quality.size(); ++i) {
    if (a.quality.data()[i] == 1 && b.quality.data()[i] == 1) {
      EXPECT_NEAR(a.cos2.data()[i], b.cos2.data()[i], 1e-6);
      EXPECT_NEAR(a.sin2.data()[i], b.sin2.data()[i], 1e-6);
      EXPECT_NEAR(a.width.data()[i], b.width.data()[i], 1e-6);
    }
  }
}

TEST(Rasterize, Examples) {
  const GraspMaps empty = rasterize(std::vector<GraspRect>{}, 32);
  EXPECT_TRUE((empty.quality == 0).all() && (empty.width == 0).all());

  const std::vector<GraspRect> one{{112, 112, 0, 60, 30}};
  const GraspMaps m = rasterize(one, 224);
  EXPECT_EQ(m.quality(112, 112), 1.0f);
  EXPECT_NEAR(m.width(112, 112), 0.4f, 1e-7);
  EXPECT_EQ(m.cos2(112, 112), 1.0f);
  EXPECT_EQ(m.sin2(112, 112), 0.0f);
  // Full width (61 columns), middle third of the height (rows 107..117).
  EXPECT_EQ(m.quality(112, 82), 1.0f);
  EXPECT_EQ(m.quality(112, 81), 0.0f);
  EXPECT_EQ(m.quality(117, 112), 1.0f);
  EXPECT_EQ(m.quality(118, 112), 0.0f);
}

TEST(Rasterize, PaintedAreaMatchesGeometry) {
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const GraspRect r{rng.uniform(60, 160), rng.uniform(60, 160), rng.uniform(-1.5, 1.5), rng.uniform(20, 80),
                      rng.uniform(15, 60)};
    const GraspMaps m = rasterize(std::vector<GraspRect>{r}, 224);
    const double band_w = r.width, band_h = r.height / 3;
    const double area = band_w * band_h;
    const double perimeter = 2 * (band_w + band_h);
    EXPECT_NEAR(m.quality.sum(), area, perimeter) << i;
  }
}

TEST(Rasterize, LaterRectanglesOverwrite) {
  const std::vector<GraspRect> rects{{50, 50, 0, 40, 30}, {50, 50, kPi / 4, 20, 30}};
  const GraspMaps m = rasterize(rects, 100);
  EXPECT_NEAR(m.sin2(50, 50), 1.0f, 1e-6);
  EXPECT_NEAR(m.width(50, 50), 20.0f / 150.0f, 1e-7);
  EXPECT_NEAR(rasterize(std::vector<GraspRect>{{50, 50, 0, 400, 30}}, 100).width(50, 50), 1.0f, 1e-7);
}

TEST(Normalize, Examples) {
  MapArray constant = MapArray::Constant(4, 4, 3.5f);
  EXPECT_TRUE((normalize(constant) == 0).all());
  MapArray pair(1, 2);
  pair << 0, 2;
  const MapArray n = normalize(pair);
  EXPECT_NEAR(n(0, 0), -1, 1e-6);
  EXPECT_NEAR(n(0, 1), 1, 1e-6);
  Rng rng(3);
  MapArray random(30, 40);
  for (Index i = 0; i < random.size(); ++i) random.data()[i] = static_cast<float>(rng.uniform(0, 10));
  const MapArray r = normalize(random);
  EXPECT_NEAR(r.cast<double>().mean(), 0, 1e-5);
  EXPECT_NEAR(std::sqrt(r.cast<double>().square().mean()), 1, 1e-4);
}

TEST(FillDepth, Examples) {
  MapArray clean(2, 2);
  clean << 1, 2, 3, 4;
  EXPECT_TRUE((fill_depth(clean) == clean).all());

  MapArray hole = MapArray::Constant(3, 3, 5);
  hole(1, 1) = kNan;
  EXPECT_EQ(fill_depth(hole)(1, 1), 5);

  MapArray tie(3, 1);
  tie << 3, kNan, 9;
  EXPECT_EQ(fill_depth(tie)(1, 0), 3);

  MapArray none = MapArray::Constant(2, 2, kNan);
  EXPECT_THROW(fill_depth(none), DataError);
}

TEST(FillDepth, NearestAndIdempotent) {
  Rng rng(4);
  MapArray depth(20, 25);
  for (Index i = 0; i < depth.size(); ++i) {
    depth.data()[i] = rng.uniform(0, 1) < 0.3 ? std::numeric_limits<float>::infinity() : static_cast<float>(i);
  }
  const MapArray filled = fill_depth(depth);
  EXPECT_TRUE(filled.allFinite());
  EXPECT_TRUE((fill_depth(filled) == filled).all());
  for (Index r = 0; r < depth.rows(); ++r) {
    for (Index c = 0; c < depth.cols(); ++c) {
      if (std::isfinite(depth(r, c))) {
        EXPECT_EQ(filled(r, c), depth(r, c));
        continue;
      }
      // Brute force nearest finite pixel, first in row-major order on ties.
      Index best = -1, best_d = std::numeric_limits<Index>::max();
      for (Index i = 0; i < depth.size(); ++i) {
        if (!std::isfinite(depth.data()[i])) continue;
        const Index dr = i / depth.cols() - r, dc = i % depth.cols() - c;
        if (dr * dr + dc * dc < best_d) {
          best_d = dr * dr + dc * dc;
          best = i;
        }
      }
      EXPECT_EQ(filled(r, c), depth.data()[best]);
    }
  }
}

TEST(CropResize, CenterCropAndRect) {
  MapArray src(480, 640);
  for (Index r = 0; r < 480; ++r)
    for (Index c = 0; c < 640; ++c) src(r, c) = static_cast<float>(r * 1000 + c);
  const MapArray out = crop_resize_nearest(src, 351, 224);
  EXPECT_EQ(out.rows(), 224);
  EXPECT_EQ(out.cols(), 224);
  const MapArray same = crop_resize_bilinear(src.block(0, 0, 224, 224), 351, 224);
  EXPECT_TRUE((same == src.block(0, 0, 224, 224)).all());
  // The crop center pixel (64 + 175, 144 + 175) maps to the output center.
  const GraspRect r = crop_resize_rect(GraspRect{319, 239, 0.3, 35.1, 17.55}, 480, 640, 351, 224);
  EXPECT_NEAR(r.x, 111.5, 1e-9);
  EXPECT_NEAR(r.y, 111.5, 1e-9);
  EXPECT_NEAR(r.width, 35.1 * 224 / 351, 1e-9);
  EXPECT_EQ(r.theta, 0.3);
}

RawScene small_scene() {
  RawScene s;
  Rng rng(5);
  s.rgb.assign(3, MapArray(224, 224));
  s.depth = MapArray(224, 224);
  for (auto& ch : s.rgb)
    for (Index i = 0; i < ch.size(); ++i) ch.data()[i] = static_cast<float>(rng.uniform(0, 1));
  for (Index i = 0; i < s.depth.size(); ++i) s.depth.data()[i] = static_cast<float>(rng.uniform(0.5, 0.8));
  s.depth(10, 10) = kNan;
  s.rects = {{100, 120, 0.4, 50, 25}, {300, 100, 0, 20, 10}};
  s.object_id = "obj";
  s.source = "mem";
  return s;
}

TEST(MakeRecord, ModesAndFiltering) {
  const RawScene s = small_scene();
  for (InputMode mode : {InputMode::kDepth, InputMode::kRgb, InputMode::kRgbd}) {
    const SampleRecord rec = make_record(s, mode);
    EXPECT_EQ(rec.image.shape(), (Shape{input_channels(mode), 224, 224}));
    EXPECT_TRUE(std::all_of(rec.image.data().begin(), rec.image.data().end(), [](float v) { return std::isfinite(v); }));
    ASSERT_EQ(rec.pos_rects.size(), 1u);
    EXPECT_EQ(rec.object_id, "obj");
  }
  RawScene no_depth = s;
  no_depth.depth.resize(0, 0);
  try {
    make_record(no_depth, InputMode::kRgbd);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("mem"), std::string::npos);
  }
  EXPECT_NO_THROW(make_record(no_depth, InputMode::kRgb));
}

TEST(Augment, IdentityAndDeterminism) {
  const SampleRecord rec = make_record(small_scene(), InputMode::kRgbd);
  const SampleRecord same = augment(rec, AugmentParams{0, 1.0});
  EXPECT_TRUE(std::equal(same.image.data().begin(), same.image.data().end(), rec.image.data().begin()));
  EXPECT_TRUE((same.targets.quality == rec.targets.quality).all());
  EXPECT_TRUE((same.targets.cos2 == rec.targets.cos2).all());

  const SampleRecord a = augment(rec, std::uint64_t{42});
  const SampleRecord b = augment(rec, std::uint64_t{42});
  EXPECT_TRUE(std::equal(a.image.data().begin(), a.image.data().end(), b.image.data().begin()));
  EXPECT_TRUE((a.targets.width == b.targets.width).all());
}

TEST(Augment, QuarterTurnMovesRectangles) {
  SampleRecord rec = make_record(small_scene(), InputMode::kRgb);
  const GraspRect r = rec.pos_rects[0];
  const SampleRecord out = augment(rec, AugmentParams{1, 1.0});
  ASSERT_EQ(out.pos_rects.size(), 1u);
  const double c = 111.5;
  EXPECT_NEAR(out.pos_rects[0].x, c - (r.y - c), 1e-9);
  EXPECT_NEAR(out.pos_rects[0].y, c + (r.x - c), 1e-9);
  EXPECT_NEAR(out.pos_rects[0].theta, normalize_angle(r.theta + kPi / 2), 1e-12);
  // Pixels move with the labels: pixel (row, col) lands on (col, 223 - row).
  for (Index row : {0, 17, 200})
    for (Index col : {3, 111, 223})
      EXPECT_EQ(out.image.data()[col * 224 + (223 - row)], rec.image.data()[row * 224 + col]);
}

TEST(Augment, PreservesSuccessMetric) {
  const auto records = synth_generate(8, 224, 9);
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const SampleRecord& rec = records[seed % records.size()];
    const AugmentParams p = draw_augment(seed);
    EXPECT_GE(p.zoom, 0.9);
    EXPECT_LT(p.zoom, 1.1);
    const SampleRecord out = augment(rec, p);
    ASSERT_FALSE(out.pos_rects.empty());
    for (const auto& r : out.pos_rects) EXPECT_TRUE(is_success(r, out.pos_rects));
    EXPECT_TRUE((out.targets.quality == rasterize(out.pos_rects, 224).quality).all());
  }
}

TEST(Synth, DeterministicAndLabelled) {
  const auto a = synth_generate(6, 224, 7);
  const auto b = synth_generate(6, 224, 7);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(std::equal(a[i].image.data().begin(), a[i].image.data().end(), b[i].image.data().begin()));
    EXPECT_EQ(a[i].object_id, b[i].object_id);
    ASSERT_EQ(a[i].pos_rects.size(), 1u);
    EXPECT_EQ(a[i].pos_rects[0].x, b[i].pos_rects[0].x);
    EXPECT_EQ(a[i].object_id.rfind("bar-l", 0), 0u);
  }
  EXPECT_FALSE(std::equal(a[0].image.data().begin(), a[0].image.data().end(),
                          synth_generate(1, 224, 8)[0].image.data().begin()));
  EXPECT_THROW(synth_generate(0, 224, 7), ContractError);
}

TEST(Synth, BarGeometry) {
  const BarSpec bar{112, 112, 100, 20, 0};
  const RawScene s = render_bar(bar, {200, 200, 200}, 224);
  ASSERT_EQ(s.rects.size(), 1u);
  EXPECT_NEAR(s.rects[0].theta, kPi / 2, 1e-12);
  EXPECT_EQ(s.rects[0].width, 40);
  Index bright = 0;
  for (Index i = 0; i < s.rgb[0].size(); ++i) bright += s.rgb[0].data()[i] > 0.5f;
  EXPECT_NEAR(static_cast<double>(bright), 100.0 * 20.0, 2 * (100 + 20));

  for (std::size_t i = 0; i < 50; ++i) {
    const BarSpec d = draw_bar(3, i, 224);
    EXPECT_GE(d.length, 60);
    EXPECT_LT(d.length, 120);
    EXPECT_GE(d.thickness, 10);
    EXPECT_LT(d.thickness, 30);
    const RawScene r = render_bar(d, {255, 150, 200}, 224);
    Index count = 0;
    for (Index k = 0; k < r.rgb[0].size(); ++k) count += r.rgb[0].data()[k] > 0.5f;
    EXPECT_NEAR(static_cast<double>(count), d.length * d.thickness, 2 * (d.length + d.thickness)) << i;
  }
}

TEST(Splits, ImageWiseSizes) {
  std::vector<std::string> ids(885, "x");
  const Splits s = make_splits(ids, SplitScheme::kImageWise, 5, 1);
  for (const auto& fold : s.members) EXPECT_EQ(fold.size(), 177u);
  const Splits ten = make_splits(std::vector<std::string>(10, "y"), SplitScheme::kImageWise, 2, 1);
  EXPECT_EQ(ten.members[0].size(), 5u);
  EXPECT_EQ(ten.members[1].size(), 5u);
}

TEST(Splits, ObjectWiseKeepsObjectsTogether) {
  Rng rng(6);
  std::vector<std::string> ids;
  for (int i = 0; i < 200; ++i) ids.push_back("obj" + std::to_string(rng.below(23)));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Splits s = make_splits(ids, SplitScheme::kObjectWise, 5, seed);
    std::map<std::string, int> fold_of_id;
    std::size_t covered = 0;
    for (int f = 0; f < 5; ++f) {
      covered += s.members[f].size();
      for (std::size_t i : s.members[f]) {
        const auto [it, fresh] = fold_of_id.emplace(ids[i], f);
        EXPECT_EQ(it->second, f);
        EXPECT_EQ(s.fold_of[i], f);
      }
    }
    EXPECT_EQ(covered, ids.size());
  }
}

TEST(Splits, Errors) {
  EXPECT_THROW(make_splits(std::vector<std::string>(4, "a"), SplitScheme::kImageWise, 1, 0), SplitError);
  EXPECT_THROW(make_splits(std::vector<std::string>{"a", "a", "b"}, SplitScheme::kObjectWise, 3, 0), SplitError);
  EXPECT_EQ(parse_split_scheme("object"), SplitScheme::kObjectWise);
  EXPECT_EQ(parse_split_scheme("IW"), SplitScheme::kImageWise);
  EXPECT_THROW(parse_split_scheme("random"), ConfigError);
}

TEST(Files, WriteAndLoadScenes) {
  const auto dir = scratch_dir("scenes");
  const auto scenes = synth_scenes(3, 224, 11);
  write_scenes(dir.string(), scenes);
  const auto entries = read_index((dir / "index.tsv").string());
  ASSERT_EQ(entries.size(), 3u);
  const auto loaded = load_dataset((dir / "index.tsv").string(), InputMode::kRgbd);
  const auto direct = synth_generate(3, 224, 11);
  ASSERT_EQ(loaded.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(loaded[i].object_id, direct[i].object_id);
    ASSERT_EQ(loaded[i].pos_rects.size(), 1u);
    EXPECT_NEAR(loaded[i].pos_rects[0].x, direct[i].pos_rects[0].x, 1e-9);
    EXPECT_NEAR(angle_distance(loaded[i].pos_rects[0].theta, direct[i].pos_rects[0].theta), 0, 1e-9);
    for (Index k = 0; k < direct[i].image.numel(); ++k) {
      EXPECT_NEAR(loaded[i].image.data()[k], direct[i].image.data()[k], 1e-5);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(Files, IndexParsingAndErrors) {
  const auto dir = scratch_dir("index");
  write_file((dir / "index.tsv").string(), "# comment\na.png\ta.txt\tobj1\n\nb.f32raw\tb.txt\tobj2\tignored.txt\n");
  const auto entries = read_index((dir / "index.tsv").string());
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].image, (dir / "a.png").string());
  EXPECT_EQ(entries[1].object_id, "obj2");
  EXPECT_EQ(entries[1].depth, (dir / "ignored.txt").string());

  write_file((dir / "bad.tsv").string(), "only-one-column\n");
  EXPECT_THROW(read_index((dir / "bad.tsv").string()), FormatError);

  try {
    load_dataset((dir / "index.tsv").string(), InputMode::kRgb);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("a.png"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST(Files, DepthRasters) {
  const auto dir = scratch_dir("depth");
  MapArray d(2, 3);
  d << 0.5f, kNan, 1.5f, 2, 3, 4;
  write_f32raw((dir / "d.f32raw").string(), d);
  const MapArray back = read_depth((dir / "d.f32raw").string());
  ASSERT_EQ(back.rows(), 2);
  EXPECT_TRUE(std::isnan(back(0, 1)));
  EXPECT_EQ(back(1, 2), 4);
  write_file((dir / "d.txt").string(), "0.5 nan 1.5\n2 3 4\n");
  const MapArray text = read_depth((dir / "d.txt").string());
  EXPECT_EQ(text.cols(), 3);
  EXPECT_TRUE(std::isnan(text(0, 1)));
  EXPECT_EQ(text(1, 0), 2);
  write_file((dir / "ragged.txt").string(), "1 2\n3\n");
  EXPECT_THROW(read_depth((dir / "ragged.txt").string()), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(Files, PgmAndPng) {
  const auto dir = scratch_dir("images");
  MapArray m(2, 2);
  m << 0, 1, 2, 4;
  const std::string pgm = encode_pgm(m);
  EXPECT_EQ(pgm.substr(0, 11), "P5 2 2 255\n");
  EXPECT_EQ(pgm.size(), 15u);
  write_pgm((dir / "m.pgm").string(), m);
  const MapArray p = read_pgm((dir / "m.pgm").string());
  EXPECT_EQ(p(0, 0), 0);
  EXPECT_EQ(p(1, 1), 255);
  EXPECT_EQ(p(0, 1), 64);
  write_pgm((dir / "c.pgm").string(), MapArray::Constant(3, 3, 7));
  EXPECT_TRUE((read_pgm((dir / "c.pgm").string()) == 0).all());

  std::vector<MapArray> rgb(3, MapArray::Constant(4, 5, 0.2f));
  rgb[1](2, 3) = 1.0f;
  write_png((dir / "x.png").string(), rgb);
  const auto read = read_png((dir / "x.png").string());
  ASSERT_EQ(read.size(), 3u);
  EXPECT_EQ(read[0].rows(), 4);
  EXPECT_EQ(read[1](2, 3), 1.0f);
  EXPECT_NEAR(read[2](0, 0), 51 / 255.0f, 1e-7);
  EXPECT_THROW(read_png((dir / "missing.png").string()), IoError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace tfgrasp
