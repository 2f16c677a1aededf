#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "geomeval/error.hpp"
#include "geomeval/geometry.hpp"
#include "geomeval/rng.hpp"

// Deterministic synthetic scenes: analytic surfaces seen by a pinhole camera moving along
// a parametric trajectory. Everything is a pure function of the SceneSpec.
namespace geomeval::synth {

enum class Surface { plane, tilted_plane, sphere_patch, two_plane_step, smooth_random };
enum class TrajectoryModel { static_camera, orbit, random_walk };

inline std::string_view to_string(Surface s) {
  switch (s) {
    case Surface::plane: return "plane";
    case Surface::tilted_plane: return "tilted_plane";
    case Surface::sphere_patch: return "sphere_patch";
    case Surface::two_plane_step: return "two_plane_step";
    case Surface::smooth_random: return "smooth_random";
  }
  return "?";
}

inline std::string_view to_string(TrajectoryModel t) {
  switch (t) {
    case TrajectoryModel::static_camera: return "static";
    case TrajectoryModel::orbit: return "orbit";
    case TrajectoryModel::random_walk: return "random_walk";
  }
  return "?";
}

inline Surface parse_surface(std::string_view s) {
  for (Surface v : {Surface::plane, Surface::tilted_plane, Surface::sphere_patch, Surface::two_plane_step,
                    Surface::smooth_random})
    if (s == to_string(v)) return v;
  throw Error(Errc::parse, "unknown surface '" + std::string(s) + "'");
}

inline TrajectoryModel parse_trajectory_model(std::string_view s) {
  for (TrajectoryModel v : {TrajectoryModel::static_camera, TrajectoryModel::orbit, TrajectoryModel::random_walk})
    if (s == to_string(v)) return v;
  throw Error(Errc::parse, "unknown trajectory '" + std::string(s) + "'");
}

struct SceneSpec {
  std::uint64_t seed = 0;
  int n_frames = 1;
  int rows = 32;
  int cols = 32;
  Surface surface = Surface::plane;
  TrajectoryModel trajectory = TrajectoryModel::static_camera;
  double metric_scale = 1.0;

  void validate() const {
    if (n_frames < 1) throw Error(Errc::invalid_argument, "n_frames must be >= 1");
    if (rows < 4 || cols < 4) throw Error(Errc::invalid_argument, "resolution must be at least 4x4");
    if (!(metric_scale > 0.0) || !std::isfinite(metric_scale))
      throw Error(Errc::invalid_argument, "metric_scale must be positive");
  }
};

/// Three normal draws taken in x, y, z order.
inline Vec3 normal3(Rng& rng) {
  Vec3 v;
  for (int k = 0; k < 3; ++k) v[k] = rng.normal();
  return v;
}

inline Vec3 uniform3(Rng& rng, double lo, double hi) {
  Vec3 v;
  for (int k = 0; k < 3; ++k) v[k] = rng.uniform(lo, hi);
  return v;
}

struct SceneData {
  std::vector<Pointmap> pointmaps;  // camera frame, metres
  std::vector<ScalarMap> depths;    // z of the pointmaps
  Trajectory trajectory;            // camera-to-world, metres
  double metric_scale = 1.0;
};

// Orbit step between consecutive frames.
inline constexpr double kOrbitStepRad = 4.0 * std::numbers::pi / 180.0;

/// Analytic scene in unit coordinates (metric_scale applied on output).
class Scene {
 public:
  explicit Scene(const SceneSpec& spec) : spec_(spec) {
    spec_.validate();
    if (spec_.surface == Surface::smooth_random) {
      waves_.resize(4);
      Rng rng(spec_.seed, 0x5F);
      for (auto& w : waves_) {
        w.amp = rng.uniform(0.01, 0.03);
        w.fx = rng.uniform(2.0, 5.0);
        w.fy = rng.uniform(2.0, 5.0);
        w.px = rng.uniform(0.0, 2.0 * std::numbers::pi);
        w.py = rng.uniform(0.0, 2.0 * std::numbers::pi);
      }
    }
  }

  const SceneSpec& spec() const { return spec_; }
  double focal() const { return static_cast<double>(spec_.cols); }

  /// Camera-frame ray through a (sub)pixel centre, normalised to z = 1.
  Vec3 pixel_ray(double row, double col) const {
    return {(col + 0.5 - 0.5 * spec_.cols) / focal(), (row + 0.5 - 0.5 * spec_.rows) / focal(), 1.0};
  }

  /// Inverse of pixel_ray for a camera-frame point with z > 0.
  Vec2 project(const Vec3& p) const {
    return {p.y() / p.z() * focal() + 0.5 * spec_.rows - 0.5, p.x() / p.z() * focal() + 0.5 * spec_.cols - 0.5};
  }

  /// Unit-coordinate camera pose of frame i.
  Pose unit_pose(int i) const {
    switch (spec_.trajectory) {
      case TrajectoryModel::static_camera: return Pose::identity();
      case TrajectoryModel::orbit: {
        const double theta = (i - 0.5 * (spec_.n_frames - 1)) * kOrbitStepRad;
        const Mat3 r = axis_angle(Vec3::UnitY(), theta);
        const Vec3 focus(0.0, 0.0, 1.0);
        return {r, focus + r * Vec3(0.0, 0.0, -1.0)};
      }
      case TrajectoryModel::random_walk: return walk_.at(static_cast<std::size_t>(i));
    }
    return Pose::identity();
  }

  /// Distance t along the camera-frame ray d (z = 1) to the surface, i.e. the depth.
  std::optional<double> intersect(const Pose& cam, const Vec3& d) const {
    const Vec3 o = cam.translation;
    const Vec3 dir = cam.rotation * d;
    auto plane_hit = [&](const Vec3& n, double c) -> std::optional<double> {
      const double den = n.dot(dir);
      if (std::abs(den) < 1e-12) return std::nullopt;
      const double t = (c - n.dot(o)) / den;
      if (!(t > 1e-9)) return std::nullopt;
      return t;
    };
    switch (spec_.surface) {
      case Surface::plane: return plane_hit(Vec3::UnitZ(), 1.0);
      case Surface::tilted_plane: return plane_hit(Vec3(1.0, 0.0, 1.0), 1.0);
      case Surface::sphere_patch: {
        const Vec3 center(0.0, 0.0, 3.0);
        constexpr double radius = 2.0;
        const Vec3 oc = o - center;
        const double a = dir.squaredNorm(), b = 2.0 * oc.dot(dir), c = oc.squaredNorm() - radius * radius;
        const double disc = b * b - 4.0 * a * c;
        if (disc < 0.0) return std::nullopt;
        const double t = (-b - std::sqrt(disc)) / (2.0 * a);
        if (!(t > 1e-9)) return std::nullopt;
        return t;
      }
      case Surface::two_plane_step: {
        if (auto t = plane_hit(Vec3::UnitZ(), 0.8); t && (o + *t * dir).x() < 0.0) return t;
        return plane_hit(Vec3::UnitZ(), 1.2);
      }
      case Surface::smooth_random: {
        if (std::abs(dir.z()) < 1e-12) return std::nullopt;
        double t = (1.0 - o.z()) / dir.z();
        for (int it = 0; it < 100; ++it) {
          const Vec3 x = o + t * dir;
          const double f = x.z() - height(x.x(), x.y());
          const auto [hx, hy] = height_gradient(x.x(), x.y());
          const double df = dir.z() - hx * dir.x() - hy * dir.y();
          if (std::abs(df) < 1e-12) return std::nullopt;
          const double step = f / df;
          t -= step;
          if (std::abs(step) < 1e-15 * (1.0 + std::abs(t))) break;
        }
        const Vec3 x = o + t * dir;
        if (!(t > 1e-9) || std::abs(x.z() - height(x.x(), x.y())) > 1e-12) return std::nullopt;
        return t;
      }
    }
    return std::nullopt;
  }

  /// Signed implicit-surface residual of a unit-coordinate world point (0 on the surface).
  double implicit(const Vec3& x) const {
    switch (spec_.surface) {
      case Surface::plane: return x.z() - 1.0;
      case Surface::tilted_plane: return (x.x() + x.z() - 1.0) / std::numbers::sqrt2;
      case Surface::sphere_patch: return (x - Vec3(0.0, 0.0, 3.0)).norm() - 2.0;
      case Surface::two_plane_step: return x.x() < 0.0 ? std::min(std::abs(x.z() - 0.8), std::abs(x.z() - 1.2))
                                                        : x.z() - 1.2;
      case Surface::smooth_random: return x.z() - height(x.x(), x.y());
    }
    return 0.0;
  }

  double height(double x, double y) const {
    double h = 1.0;
    for (const auto& w : waves_) h += w.amp * std::sin(w.fx * x + w.px) * std::cos(w.fy * y + w.py);
    return h;
  }

  void set_walk(std::vector<Pose> walk) { walk_ = std::move(walk); }

 private:
  std::pair<double, double> height_gradient(double x, double y) const {
    double gx = 0.0, gy = 0.0;
    for (const auto& w : waves_) {
      gx += w.amp * w.fx * std::cos(w.fx * x + w.px) * std::cos(w.fy * y + w.py);
      gy -= w.amp * w.fy * std::sin(w.fx * x + w.px) * std::sin(w.fy * y + w.py);
    }
    return {gx, gy};
  }

  struct Wave {
    double amp = 0.0, fx = 0.0, fy = 0.0, px = 0.0, py = 0.0;
  };

  SceneSpec spec_;
  std::vector<Wave> waves_;
  std::vector<Pose> walk_;
};

/// Builds the scene model, including the seeded random-walk poses.
inline Scene make_scene(const SceneSpec& spec) {
  SceneSpec s = spec;
  s.validate();
  Scene scene(s);
  if (s.trajectory == TrajectoryModel::random_walk) {
    Rng rng(s.seed, 0x77);
    std::vector<Pose> walk(static_cast<std::size_t>(s.n_frames));
    constexpr double step_sigma = 0.03;
    constexpr double rot_sigma = 1.5 * std::numbers::pi / 180.0;
    for (std::size_t i = 1; i < walk.size(); ++i) {
      const Vec3 dt = normal3(rng) * step_sigma;
      const Vec3 w = normal3(rng) * rot_sigma;
      walk[i] = {walk[i - 1].rotation * so3_exp(w), walk[i - 1].translation + dt};
    }
    scene.set_walk(std::move(walk));
  }
  return scene;
}

/// Samples the surface per pixel in each camera frame. depth == pointmap z exactly; pixels
/// whose ray misses the surface are masked out.
inline SceneData generate(const SceneSpec& spec) {
  const Scene scene = make_scene(spec);
  const double s = spec.metric_scale;
  SceneData out;
  out.metric_scale = s;
  std::vector<Pose> poses;
  for (int f = 0; f < spec.n_frames; ++f) {
    const Pose cam = scene.unit_pose(f);
    Pointmap pm(spec.rows, spec.cols, f);
    ScalarMap depth(spec.rows, spec.cols, 0.0, 0);
    for (int r = 0; r < spec.rows; ++r)
      for (int c = 0; c < spec.cols; ++c) {
        const Vec3 d = scene.pixel_ray(r, c);
        const auto t = scene.intersect(cam, d);
        if (!t) {
          pm.mask(r, c) = 0;
          continue;
        }
        pm(r, c) = (*t * s) * d;
        depth.values(r, c) = pm(r, c).z();
        depth.mask(r, c) = 1;
      }
    out.pointmaps.push_back(std::move(pm));
    out.depths.push_back(std::move(depth));
    poses.push_back({cam.rotation, cam.translation * s});
  }
  out.trajectory = Trajectory::from_poses(std::move(poses));
  return out;
}

struct FrameJitter {
  double rotation_rad = 0.0;
  double translation = 0.0;  // metres
};

struct Corruption {
  double gaussian_sigma = 0.0;    // metres, per coordinate
  double outlier_fraction = 0.0;  // of all valid pixels, in [0, 1)
  double outlier_magnitude = 1.0; // multiplier applied to outlier points
  std::optional<Sim3> global_sim3;
  std::optional<FrameJitter> per_frame_jitter;

  void validate() const {
    if (!(gaussian_sigma >= 0.0)) throw Error(Errc::invalid_argument, "gaussian_sigma must be >= 0");
    if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0))
      throw Error(Errc::invalid_argument, "outlier_fraction must be in [0, 1)");
    if (global_sim3 && !(global_sim3->scale > 0.0)) throw Error(Errc::invalid_argument, "gauge scale must be > 0");
  }
};

struct CorruptedScene {
  SceneData data;
  std::vector<Mask> outliers;  // 1 where a pixel was replaced by an outlier
  std::size_t outlier_count = 0;
};

/// Applies, in order: per-frame pose jitter, Gaussian point noise, outliers on exactly
/// ⌊fraction·M⌋ of the M valid pixels, then the global Sim(3) gauge (poses move, camera-frame
/// geometry scales). Depths are re-derived from the corrupted points.
inline CorruptedScene corrupt(const SceneData& data, const Corruption& c, std::uint64_t seed) {
  c.validate();
  CorruptedScene out{data, {}, 0};
  SceneData& d = out.data;
  Rng rng(seed, 0xC0);

  if (c.per_frame_jitter) {
    Rng jr = rng.split(1);
    for (auto& p : d.trajectory.poses) {
      Vec3 axis = normal3(jr);
      Vec3 dir = normal3(jr);
      if (axis.norm() == 0.0) axis = Vec3::UnitZ();
      if (dir.norm() == 0.0) dir = Vec3::UnitX();
      p.rotation = axis_angle(axis, c.per_frame_jitter->rotation_rad) * p.rotation;
      p.translation += dir.normalized() * c.per_frame_jitter->translation;
    }
  }

  if (c.gaussian_sigma > 0.0) {
    Rng nr = rng.split(2);
    for (auto& pm : d.pointmaps)
      for (int r = 0; r < pm.rows(); ++r)
        for (int col = 0; col < pm.cols(); ++col)
          if (pm.valid(r, col))
            pm(r, col) += normal3(nr) * c.gaussian_sigma;
  }

  for (const auto& pm : d.pointmaps) out.outliers.emplace_back(pm.rows(), pm.cols(), 0);
  if (c.outlier_fraction > 0.0) {
    struct Pix {
      std::size_t f;
      int r, c;
    };
    std::vector<Pix> valid;
    for (std::size_t f = 0; f < d.pointmaps.size(); ++f)
      for (int r = 0; r < d.pointmaps[f].rows(); ++r)
        for (int col = 0; col < d.pointmaps[f].cols(); ++col)
          if (d.pointmaps[f].valid(r, col)) valid.push_back({f, r, col});
    const auto k = static_cast<std::size_t>(std::floor(c.outlier_fraction * static_cast<double>(valid.size()) + 1e-9));
    Rng orng = rng.split(3);
    for (std::size_t i = 0; i < k; ++i) {  // partial Fisher–Yates
      const std::size_t j = i + orng.below(valid.size() - i);
      std::swap(valid[i], valid[j]);
      const Pix& p = valid[i];
      d.pointmaps[p.f](p.r, p.c) *= c.outlier_magnitude;
      out.outliers[p.f](p.r, p.c) = 1;
    }
    out.outlier_count = k;
  }

  if (c.gaussian_sigma > 0.0 || c.outlier_fraction > 0.0 || d.depths.size() != d.pointmaps.size()) {
    d.depths.resize(d.pointmaps.size());
    for (std::size_t f = 0; f < d.pointmaps.size(); ++f) d.depths[f] = pointmap_depth(d.pointmaps[f]);
  }

  if (c.global_sim3) {
    const Sim3& g = *c.global_sim3;
    for (auto& p : d.trajectory.poses) p = transform_pose(g, p);
    for (auto& pm : d.pointmaps)
      for (auto& p : pm.points.flat()) p *= g.scale;
    for (auto& dm : d.depths)
      for (auto& v : dm.values.flat()) v *= g.scale;
    d.metric_scale *= g.scale;
  }
  return out;
}

/// Random Sim(3) with log-uniform scale in [scale_lo, scale_hi].
inline Sim3 random_sim3(Rng& rng, double scale_lo = 0.1, double scale_hi = 10.0, double translation = 2.0) {
  Sim3 s;
  s.scale = std::exp(rng.uniform(std::log(scale_lo), std::log(scale_hi)));
  const Vec3 axis = normal3(rng);
  s.rotation = axis_angle(axis, rng.uniform(0.0, std::numbers::pi));
  s.translation = uniform3(rng, -translation, translation);
  return s;
}

inline Mat3 random_rotation(Rng& rng) {
  Eigen::Vector4d q;
  for (int k = 0; k < 4; ++k) q[k] = rng.normal();
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).normalized().toRotationMatrix();
}

inline Pose random_pose(Rng& rng, double translation = 1.0) {
  const Mat3 r = random_rotation(rng);
  return {r, normal3(rng) * translation};
}

}  // namespace geomeval::synth
