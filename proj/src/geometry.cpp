#include "tfgrasp/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "tfgrasp/errors.hpp"

namespace tfgrasp {
namespace {

constexpr double kPi = std::numbers::pi;

double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

double signed_area(const Polygon& poly) {
  double twice = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) twice += cross(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * twice;
}

Polygon counter_clockwise(Polygon poly) {
  if (signed_area(poly) < 0) std::reverse(poly.begin(), poly.end());
  return poly;
}

Polygon as_polygon(const GraspRect& r) {
  const auto v = rect_vertices(r);
  return Polygon(v.begin(), v.end());
}

void check_rect(const GraspRect& r) {
  if (!(r.width > 0) || !(r.height > 0) || !std::isfinite(r.x) || !std::isfinite(r.y) || !std::isfinite(r.theta)) {
    throw DegenerateError("degenerate rectangle (width " + std::to_string(r.width) + ", height " +
                          std::to_string(r.height) + ")");
  }
}

}  // namespace

double normalize_angle(double theta) {
  double t = std::fmod(theta + kPi / 2, kPi);
  if (t <= 0) t += kPi;
  return t - kPi / 2;
}

double angle_distance(double a, double b) {
  double d = std::fmod(std::abs(a - b), kPi);
  return std::min(d, kPi - d);
}

std::array<Eigen::Vector2d, 4> rect_vertices(const GraspRect& r) {
  const Eigen::Vector2d center(r.x, r.y);
  Eigen::Matrix2d rot;
  rot << std::cos(r.theta), -std::sin(r.theta), std::sin(r.theta), std::cos(r.theta);
  const double hw = r.width / 2, hh = r.height / 2;
  return {center + rot * Eigen::Vector2d(-hw, -hh), center + rot * Eigen::Vector2d(hw, -hh),
          center + rot * Eigen::Vector2d(hw, hh), center + rot * Eigen::Vector2d(-hw, hh)};
}

Eigen::Vector2d encode_angle(double theta) { return {std::cos(2 * theta), std::sin(2 * theta)}; }

double decode_angle(double c, double s) {
  if (c == 0 && s == 0) throw DegenerateError("angle code (0, 0) has no direction");
  const double theta = std::atan2(s, c) / 2;
  // atan2 returns (-pi, pi], so theta is already in (-pi/2, pi/2].
  return theta;
}

GraspMaps GraspMaps::zeros(Index rows, Index cols) {
  GraspMaps m;
  m.quality = MapArray::Zero(rows, cols);
  m.cos2 = MapArray::Zero(rows, cols);
  m.sin2 = MapArray::Zero(rows, cols);
  m.width = MapArray::Zero(rows, cols);
  return m;
}

Tensor<float> maps_to_tensor(const GraspMaps& maps) {
  const Index h = maps.rows(), w = maps.cols();
  std::vector<float> values(static_cast<std::size_t>(4 * h * w));
  const MapArray* planes[] = {&maps.quality, &maps.cos2, &maps.sin2, &maps.width};
  for (int k = 0; k < 4; ++k) {
    if (planes[k]->rows() != h || planes[k]->cols() != w) throw ShapeError("grasp maps differ in resolution");
    std::copy_n(planes[k]->data(), h * w, values.data() + k * h * w);
  }
  return Tensor<float>(Shape{4, h, w}, std::move(values));
}

GraspMaps maps_from_tensor(const Tensor<float>& t) {
  if (!((t.rank() == 3 && t.dim(0) == 4) || (t.rank() == 4 && t.dim(0) == 1 && t.dim(1) == 4))) {
    throw ShapeError("grasp maps tensor must be [4, H, W], got " + shape_string(t.shape()));
  }
  const Index h = t.dim(-2), w = t.dim(-1);
  auto plane = [&](Index k) {
    MapArray m(h, w);
    std::copy_n(t.data().data() + k * h * w, h * w, m.data());
    return m;
  };
  return {plane(0), plane(1), plane(2), plane(3)};
}

GraspPose extract_pose(const GraspMaps& maps) {
  GraspPose pose;
  const Index n = maps.quality.size();
  const float* q = maps.quality.data();
  Index best = 0;
  for (Index i = 1; i < n; ++i) {
    if (q[i] > q[best]) best = i;
  }
  pose.row = best / maps.cols();
  pose.col = best % maps.cols();
  pose.quality = q[best];
  const double c = maps.cos2(pose.row, pose.col);
  const double s = maps.sin2(pose.row, pose.col);
  pose.theta = (c == 0 && s == 0) ? 0.0 : decode_angle(c, s);
  pose.width_px = std::max(0.0, static_cast<double>(maps.width(pose.row, pose.col)) * kMaxWidthPx);
  return pose;
}

GraspRect pose_to_rect(const GraspPose& pose) {
  if (!(pose.width_px > 0)) throw DegenerateError("pose has zero width");
  return {static_cast<double>(pose.col), static_cast<double>(pose.row), normalize_angle(pose.theta), pose.width_px,
          pose.width_px / 2};
}

double polygon_area(const Polygon& poly) { return std::abs(signed_area(poly)); }

Polygon clip_convex(const Polygon& subject, const Polygon& clip) {
  Polygon out = counter_clockwise(subject);
  const Polygon edges = counter_clockwise(clip);
  for (std::size_t e = 0; e < edges.size() && !out.empty(); ++e) {
    const Eigen::Vector2d a = edges[e];
    const Eigen::Vector2d b = edges[(e + 1) % edges.size()];
    const Eigen::Vector2d dir = b - a;
    auto side = [&](const Eigen::Vector2d& p) { return cross(dir, p - a); };
    Polygon next;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const Eigen::Vector2d& p = out[i];
      const Eigen::Vector2d& q = out[(i + 1) % out.size()];
      const double sp = side(p), sq = side(q);
      if (sp >= 0) next.push_back(p);
      if ((sp >= 0) != (sq >= 0)) {
        const double t = sp / (sp - sq);
        next.push_back(p + t * (q - p));
      }
    }
    out = std::move(next);
  }
  return out;
}

double jaccard(const GraspRect& a, const GraspRect& b) {
  check_rect(a);
  check_rect(b);
  const Polygon pa = as_polygon(a);
  const Polygon pb = as_polygon(b);
  const Polygon inter = clip_convex(pa, pb);
  const double i = inter.size() < 3 ? 0.0 : polygon_area(inter);
  const double u = polygon_area(pa) + polygon_area(pb) - i;
  return u > 0 ? std::clamp(i / u, 0.0, 1.0) : 0.0;
}

MatchResult match_grasp(const GraspRect& pred, std::span<const GraspRect> truths) {
  if (truths.empty()) throw ContractError("success test needs at least one ground-truth rectangle");
  MatchResult best;
  bool best_angle_ok = false;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const double err = angle_distance(pred.theta, truths[i].theta);
    const double j = jaccard(pred, truths[i]);
    const bool angle_ok = err <= kMaxAngleError;
    const bool better = best.matched < 0 || (angle_ok && !best_angle_ok) ||
                        (angle_ok == best_angle_ok && j > best.jaccard);
    if (better) {
      best.matched = static_cast<int>(i);
      best.jaccard = j;
      best.angle_error = err;
      best_angle_ok = angle_ok;
    }
  }
  best.success = best_angle_ok && best.jaccard > kMinJaccard;
  return best;
}

bool is_success(const GraspRect& pred, std::span<const GraspRect> truths) { return match_grasp(pred, truths).success; }

}  // namespace tfgrasp
