#pragma once

// Oriented grasp rectangles, the (cos 2t, sin 2t) angle code, pixel-wise
// grasp maps, pose extraction and the rectangle success metric.
//
// Image coordinates: x is the column, y the row (pointing down). A rectangle
// with angle theta has its width axis along (cos theta, sin theta).

#include <Eigen/Core>

#include <array>
#include <span>
#include <vector>

#include "tfgrasp/tensor.hpp"

namespace tfgrasp {

// Normalized width 1.0 in a width map corresponds to this many pixels.
inline constexpr double kMaxWidthPx = 150.0;
inline constexpr double kMaxAngleError = 30.0 * 3.14159265358979323846 / 180.0;
inline constexpr double kMinJaccard = 0.25;

using MapArray = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Polygon = std::vector<Eigen::Vector2d>;

struct GraspRect {
  double x = 0;       // center column
  double y = 0;       // center row
  double theta = 0;   // radians, (-pi/2, pi/2]
  double width = 0;   // gripper opening, pixels
  double height = 0;  // jaw size, pixels
};

// Maps any finite angle into (-pi/2, pi/2] using pi-periodicity.
double normalize_angle(double theta);
// Smallest |a - b + k pi| over integers k.
double angle_distance(double a, double b);

// Corners center + R(theta) (+-w/2, +-h/2), starting at (-w/2, -h/2) and
// walking along the width axis first.
std::array<Eigen::Vector2d, 4> rect_vertices(const GraspRect& rect);

// (cos 2 theta, sin 2 theta).
Eigen::Vector2d encode_angle(double theta);
// atan2(s, c) / 2; throws DegenerateError for (0, 0).
double decode_angle(double c, double s);

// Pixel-wise quality, angle code and normalized width at one resolution.
struct GraspMaps {
  MapArray quality;
  MapArray cos2;
  MapArray sin2;
  MapArray width;

  static GraspMaps zeros(Index rows, Index cols);
  Index rows() const { return quality.rows(); }
  Index cols() const { return quality.cols(); }
};

// [4, H, W] in quality/cos/sin/width order.
Tensor<float> maps_to_tensor(const GraspMaps& maps);
// Accepts [4, H, W] or [1, 4, H, W].
GraspMaps maps_from_tensor(const Tensor<float>& t);

struct GraspPose {
  Index row = 0;
  Index col = 0;
  double theta = 0;
  double width_px = 0;
  double quality = 0;
};

// Global argmax of the quality map (ties: lowest row-major index), with
// angle and width read at that pixel. A (0, 0) angle code decodes to 0.
GraspPose extract_pose(const GraspMaps& maps);

// Rectangle centered on the pose pixel, height = width / 2.
GraspRect pose_to_rect(const GraspPose& pose);

double polygon_area(const Polygon& poly);
// Intersection of two convex polygons (any winding).
Polygon clip_convex(const Polygon& subject, const Polygon& clip);

// Intersection over union of two oriented rectangles.
double jaccard(const GraspRect& a, const GraspRect& b);

struct MatchResult {
  bool success = false;
  // Truth with the best Jaccard among those passing the angle condition
  // (or overall, when none does); -1 when unmatched.
  int matched = -1;
  double jaccard = 0;
  double angle_error = 0;
};

// Success iff some truth is within kMaxAngleError (inclusive) and has
// Jaccard strictly greater than kMinJaccard.
MatchResult match_grasp(const GraspRect& pred, std::span<const GraspRect> truths);
bool is_success(const GraspRect& pred, std::span<const GraspRect> truths);

}  // namespace tfgrasp
