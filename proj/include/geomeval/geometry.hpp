#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "geomeval/error.hpp"
#include "geomeval/grid.hpp"

namespace geomeval {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using PointSet = std::vector<Vec3>;

/// Per-frame grid of 3-D points in camera coordinates plus validity mask.
struct Pointmap {
  Grid<Vec3> points;
  Mask mask;
  int frame_index = 0;

  Pointmap() = default;
  Pointmap(int rows, int cols, int index = 0)
      : points(rows, cols, Vec3::Zero()), mask(rows, cols, 1), frame_index(index) {}

  int rows() const noexcept { return points.rows(); }
  int cols() const noexcept { return points.cols(); }
  bool valid(int r, int c) const { return mask(r, c) != 0; }
  const Vec3& operator()(int r, int c) const { return points(r, c); }
  Vec3& operator()(int r, int c) { return points(r, c); }
};

/// Throws unless the pointmap is at least 2x2, the mask matches, and valid points are finite.
inline void validate(const Pointmap& p) {
  if (p.rows() < 2 || p.cols() < 2) throw Error(Errc::invalid_argument, "pointmap must be at least 2x2");
  if (!p.mask.same_shape(p.points)) throw Error(Errc::shape_mismatch, "pointmap mask shape differs from points");
  for (int r = 0; r < p.rows(); ++r)
    for (int c = 0; c < p.cols(); ++c)
      if (p.valid(r, c) && !p(r, c).allFinite())
        throw Error(Errc::invalid_argument, "non-finite coordinate at a valid pixel");
}

/// Throws unless both lists have the same frame count and per-frame shapes.
inline void check_same_shape(std::span<const Pointmap> a, std::span<const Pointmap> b) {
  if (a.size() != b.size()) throw Error(Errc::shape_mismatch, "frame count mismatch");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!a[i].points.same_shape(b[i].points))
      throw Error(Errc::shape_mismatch, "pointmap shape mismatch at frame " + std::to_string(i));
}

/// Rigid transform, camera-to-world when used as a camera pose.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }
};

/// a ∘ b: apply b first, then a.
inline Pose compose(const Pose& a, const Pose& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

inline Pose pose_inverse(const Pose& g) {
  const Mat3 rt = g.rotation.transpose();
  return {rt, -(rt * g.translation)};
}

/// g_uv = g_u⁻¹ ∘ g_v, so that g_u ∘ g_uv = g_v.
inline Pose relative_pose(const Pose& g_u, const Pose& g_v) { return compose(pose_inverse(g_u), g_v); }

/// Similarity transform p ↦ scale·R·p + t.
struct Sim3 {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Sim3 identity() { return {}; }
  static Sim3 from_pose(const Pose& g) { return {1.0, g.rotation, g.translation}; }
  Pose rigid() const { return {rotation, translation}; }
  Vec3 operator*(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

inline Sim3 compose(const Sim3& a, const Sim3& b) {
  return {a.scale * b.scale, a.rotation * b.rotation, a.scale * (a.rotation * b.translation) + a.translation};
}

inline Sim3 sim3_inverse(const Sim3& s) {
  const Mat3 rt = s.rotation.transpose();
  return {1.0 / s.scale, rt, -(rt * s.translation) / s.scale};
}

/// Moves a camera-to-world pose into the gauge defined by `gauge` (a world-frame similarity).
/// Camera-frame geometry then scales by gauge.scale.
inline Pose transform_pose(const Sim3& gauge, const Pose& g) {
  return {gauge.rotation * g.rotation, gauge * g.translation};
}

struct Trajectory {
  std::vector<Pose> poses;
  std::vector<int> frame_indices;

  std::size_t size() const noexcept { return poses.size(); }

  static Trajectory from_poses(std::vector<Pose> poses) {
    Trajectory t;
    t.frame_indices.resize(poses.size());
    for (std::size_t i = 0; i < poses.size(); ++i) t.frame_indices[i] = static_cast<int>(i);
    t.poses = std::move(poses);
    return t;
  }

  std::vector<Vec3> positions() const {
    std::vector<Vec3> out;
    out.reserve(poses.size());
    for (const auto& p : poses) out.push_back(p.translation);
    return out;
  }
};

inline void validate(const Trajectory& t) {
  if (t.poses.size() != t.frame_indices.size())
    throw Error(Errc::shape_mismatch, "trajectory pose and index counts differ");
  for (std::size_t i = 1; i < t.frame_indices.size(); ++i)
    if (t.frame_indices[i] <= t.frame_indices[i - 1])
      throw Error(Errc::invalid_argument, "trajectory frame indices must be strictly increasing");
}

/// Projects an arbitrary 3x3 matrix onto SO(3) (Frobenius-nearest rotation).
/// Decodes the 9-D rotation parameterisation of the pose head. JacobiSVD orders
/// singular values decreasingly, which fixes the tie-break for repeated values.
inline Mat3 rot9d_to_rotation(const Mat3& m) {
  if (!m.allFinite()) throw Error(Errc::invalid_argument, "rot9d input is not finite");
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  const double d = (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return u * Eigen::Vector3d(1.0, 1.0, d).asDiagonal() * v.transpose();
}

/// Geodesic distance on SO(3) in radians, in [0, π].
///
/// Evaluated as atan2(|sin θ|, cos θ) from the skew and trace parts of r1ᵀr2, which
/// equals arccos((tr − 1)/2) for rotations but keeps full precision near 0 and π.
inline double geodesic_angle(const Mat3& r1, const Mat3& r2) {
  const Mat3 r = r1.transpose() * r2;
  const double cos_part = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const Vec3 skew(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double sin_part = 0.5 * skew.norm();
  return std::atan2(sin_part, cos_part);
}

/// Mean Euclidean distance to the origin over all valid points of all frames.
inline double scene_norm(std::span<const Pointmap> pointmaps) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& p : pointmaps)
    for (int r = 0; r < p.rows(); ++r)
      for (int c = 0; c < p.cols(); ++c)
        if (p.valid(r, c)) {
          sum += p(r, c).norm();
          ++n;
        }
  if (n == 0) throw Error(Errc::empty_overlap, "scene_norm: no valid point");
  return sum / static_cast<double>(n);
}

struct NormalMap {
  Grid<Vec3> normals;
  Mask mask;
  bool valid(int r, int c) const { return mask(r, c) != 0; }
};

/// Forward-difference cross-product normals, oriented toward the camera.
/// The last row and column have no forward neighbour and stay invalid.
inline NormalMap pointmap_normals(const Pointmap& p) {
  if (p.rows() < 2 || p.cols() < 2) throw Error(Errc::invalid_argument, "pointmap must be at least 2x2");
  NormalMap out{Grid<Vec3>(p.rows(), p.cols(), Vec3::Zero()), Mask(p.rows(), p.cols(), 0)};
  for (int r = 0; r + 1 < p.rows(); ++r) {
    for (int c = 0; c + 1 < p.cols(); ++c) {
      if (!p.valid(r, c) || !p.valid(r, c + 1) || !p.valid(r + 1, c)) continue;
      const Vec3& o = p(r, c);
      Vec3 n = (p(r, c + 1) - o).cross(p(r + 1, c) - o);
      const double len = n.norm();
      if (!(len > 1e-12)) continue;
      n /= len;
      if (n.dot(-o) < 0.0) n = -n;
      out.normals(r, c) = n;
      out.mask(r, c) = 1;
    }
  }
  return out;
}

/// normalizer / z on valid pixels; z ≤ 1e-9 is masked out.
inline ScalarMap pointmap_to_inverse_depth(const Pointmap& p, double normalizer) {
  if (!(normalizer > 0.0)) throw Error(Errc::invalid_argument, "normalizer must be positive");
  ScalarMap d(p.rows(), p.cols(), 0.0, 0);
  for (int r = 0; r < p.rows(); ++r)
    for (int c = 0; c < p.cols(); ++c) {
      const double z = p(r, c).z();
      if (p.valid(r, c) && z > 1e-9) {
        d.values(r, c) = normalizer / z;
        d.mask(r, c) = 1;
      }
    }
  return d;
}

/// Depth channel (z) of a pointmap; z ≤ 0 is masked out.
inline ScalarMap pointmap_depth(const Pointmap& p) {
  ScalarMap d(p.rows(), p.cols(), 0.0, 0);
  for (int r = 0; r < p.rows(); ++r)
    for (int c = 0; c < p.cols(); ++c)
      if (p.valid(r, c) && p(r, c).z() > 0.0) {
        d.values(r, c) = p(r, c).z();
        d.mask(r, c) = 1;
      }
  return d;
}

/// Copy of `a` whose mask is the pixelwise AND of both masks.
inline Pointmap with_joint_mask(const Pointmap& a, const Pointmap& b) {
  Pointmap out = a;
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < a.cols(); ++c) out.mask(r, c) = (a.valid(r, c) && b.valid(r, c)) ? 1 : 0;
  return out;
}

inline std::vector<Pointmap> scaled(std::span<const Pointmap> maps, double s) {
  std::vector<Pointmap> out(maps.begin(), maps.end());
  for (auto& m : out)
    for (auto& p : m.points.flat()) p *= s;
  return out;
}

/// Rotation about a unit axis (Rodrigues).
inline Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

/// SO(3) exponential of a rotation vector.
inline Mat3 so3_exp(const Vec3& w) {
  const double a = w.norm();
  if (a < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(a, w / a).toRotationMatrix();
}

}  // namespace geomeval
