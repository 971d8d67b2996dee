#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "posecl/error.hpp"

namespace posecl {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Point2&) const = default;
};

/// Pixel-space 2D keypoints of one frame. Coordinates may be subpixel.
struct RawPose {
  std::vector<Point2> keypoints;
  std::size_t head_index = 0;
};

/// Keypoints centered on their centroid, scaled to unit mean radius and
/// rotated so the head joint sits on the non-negative x-axis.
struct NormalizedPose {
  std::vector<Point2> keypoints;

  std::size_t size() const { return keypoints.size(); }
  bool operator==(const NormalizedPose&) const = default;
};

/// Intermediates of normalize_pose, exposed for inspection.
struct NormalizationTrace {
  Point2 centroid;
  double avg_distance = 0.0;
  double angle = 0.0;
  /// Row-major [cos -sin; sin cos].
  std::array<double, 4> rotation_matrix{1.0, 0.0, 0.0, 1.0};
};

struct NormalizedResult {
  NormalizedPose pose;
  NormalizationTrace trace;
};

inline constexpr double kDegenerateTolerance = 1e-9;

/// Canonicalizes a raw pose against translation, scale and head orientation.
///
/// Steps: subtract the joint centroid, divide by the mean joint distance to
/// the centroid, then right-multiply every keypoint row [x y] by
/// R(angle) = [cos -sin; sin cos] with angle = atan2(y_head, x_head) taken on
/// the scaled pose. That maps the head direction onto +x.
///
/// Throws DegeneratePose when all keypoints coincide and InvalidInput on
/// non-finite coordinates or a malformed pose.
inline NormalizedResult normalize_pose(const RawPose& pose) {
  const std::size_t k = pose.keypoints.size();
  require(k >= 2, Errc::InvalidInput, "pose needs at least 2 keypoints, got " + std::to_string(k));
  require(pose.head_index < k, Errc::InvalidInput,
          "head index " + std::to_string(pose.head_index) + " out of range for K=" + std::to_string(k));
  for (const auto& p : pose.keypoints)
    require(std::isfinite(p.x) && std::isfinite(p.y), Errc::InvalidInput, "non-finite keypoint coordinate");

  NormalizationTrace trace;
  for (const auto& p : pose.keypoints) {
    trace.centroid.x += p.x;
    trace.centroid.y += p.y;
  }
  trace.centroid.x /= static_cast<double>(k);
  trace.centroid.y /= static_cast<double>(k);

  std::vector<Point2> scaled(k);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    scaled[i] = {pose.keypoints[i].x - trace.centroid.x, pose.keypoints[i].y - trace.centroid.y};
    total += std::hypot(scaled[i].x, scaled[i].y);
  }
  trace.avg_distance = total / static_cast<double>(k);
  if (trace.avg_distance < kDegenerateTolerance) fail(Errc::DegeneratePose, "all keypoints coincide");

  for (auto& p : scaled) {
    p.x /= trace.avg_distance;
    p.y /= trace.avg_distance;
  }

  const Point2 head = scaled[pose.head_index];
  // A head at the centroid has no direction; leave the pose unrotated.
  trace.angle = std::hypot(head.x, head.y) < kDegenerateTolerance ? 0.0 : std::atan2(head.y, head.x);
  const double c = std::cos(trace.angle);
  const double s = std::sin(trace.angle);
  trace.rotation_matrix = {c, -s, s, c};

  NormalizedResult out{NormalizedPose{std::vector<Point2>(k)}, trace};
  for (std::size_t i = 0; i < k; ++i) {
    const Point2 p = scaled[i];
    // [x y] * [c -s; s c]
    out.pose.keypoints[i] = {p.x * c + p.y * s, -p.x * s + p.y * c};
  }
  return out;
}

/// Mean per-keypoint Euclidean distance between two normalized poses.
inline double pose_distance(const NormalizedPose& a, const NormalizedPose& b) {
  require(a.size() == b.size(), Errc::ShapeMismatch,
          "pose_distance: K=" + std::to_string(a.size()) + " vs K=" + std::to_string(b.size()));
  require(a.size() > 0, Errc::ShapeMismatch, "pose_distance: empty pose");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    total += std::hypot(a.keypoints[i].x - b.keypoints[i].x, a.keypoints[i].y - b.keypoints[i].y);
  return total / static_cast<double>(a.size());
}

/// (x0, y0, x1, y1, ...) layout fed to the pose encoder.
inline std::vector<double> flatten(const NormalizedPose& pose) {
  std::vector<double> out;
  out.reserve(2 * pose.size());
  for (const auto& p : pose.keypoints) {
    out.push_back(p.x);
    out.push_back(p.y);
  }
  return out;
}

}  // namespace posecl
