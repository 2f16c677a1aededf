#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "geomeval/alignment.hpp"
#include "geomeval/error.hpp"
#include "geomeval/geometry.hpp"
#include "geomeval/tokens.hpp"

namespace geomeval {

/// Loss weights. Defaults are the published training weights.
struct LossConfig {
  double pointmap = 1.0;
  double camera = 0.1;
  double translation = 100.0;
  double rotation = 1.0;
  double scale = 1.0;
  double normal = 1.0;
  double gradient = 0.1;
  double distill = 0.5;

  void validate() const {
    for (double v : {pointmap, camera, translation, rotation, scale, normal, gradient, distill})
      if (!std::isfinite(v) || v < 0.0) throw Error(Errc::invalid_argument, "loss weights must be finite and >= 0");
  }
};

/// One value per loss term, in the same order as LossConfig.
struct LossTerms {
  double pointmap = 0.0;
  double camera = 0.0;
  double translation = 0.0;
  double rotation = 0.0;
  double scale = 0.0;
  double normal = 0.0;
  double gradient = 0.0;
  double distill = 0.0;
};

struct LossReport {
  LossTerms terms;
  LossTerms weighted;
  double total = 0.0;
};

/// Scene normalisers and the robust scale between the normalised maps.
/// metric_scale() maps prediction units to ground-truth units: p ≈ metric_scale()·p̂.
struct PointmapAlignment {
  double s_star = 1.0;
  double pred_norm = 1.0;
  double gt_norm = 1.0;
  double metric_scale() const { return s_star * gt_norm / pred_norm; }
};

namespace detail {

inline std::pair<std::vector<Pointmap>, std::vector<Pointmap>> joint_masked(std::span<const Pointmap> pred,
                                                                            std::span<const Pointmap> gt) {
  check_same_shape(pred, gt);
  std::vector<Pointmap> p, g;
  p.reserve(pred.size());
  g.reserve(gt.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    p.push_back(with_joint_mask(pred[i], gt[i]));
    g.push_back(with_joint_mask(gt[i], pred[i]));
  }
  return {std::move(p), std::move(g)};
}

}  // namespace detail

/// Normalises both scenes by their mean distance to origin over the joint mask, then
/// solves the robust scale between the normalised maps.
inline PointmapAlignment align_normalized(std::span<const Pointmap> pred, std::span<const Pointmap> gt) {
  auto [p, g] = detail::joint_masked(pred, gt);
  PointmapAlignment a;
  a.pred_norm = scene_norm(p);
  a.gt_norm = scene_norm(g);
  if (!(a.pred_norm > 0.0)) throw Error(Errc::degenerate, "prediction collapses to the origin");
  const auto pn = scaled(p, 1.0 / a.pred_norm);
  const auto gn = scaled(g, 1.0 / a.gt_norm);
  a.s_star = roe_scale(pn, gn);
  return a;
}

/// Mean over jointly valid pixels of ‖s*·p̂/norm(P̂) − p/norm(P)‖₁. No confidence weighting.
inline double pointmap_loss(std::span<const Pointmap> pred, std::span<const Pointmap> gt) {
  const PointmapAlignment a = align_normalized(pred, gt);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t f = 0; f < pred.size(); ++f)
    for (int r = 0; r < pred[f].rows(); ++r)
      for (int c = 0; c < pred[f].cols(); ++c) {
        if (!pred[f].valid(r, c) || !gt[f].valid(r, c)) continue;
        const Vec3 d = a.s_star * (pred[f](r, c) / a.pred_norm) - gt[f](r, c) / a.gt_norm;
        sum += d.lpNorm<1>();
        ++n;
      }
  return sum / static_cast<double>(n);
}

/// Mean over ordered pairs u ≠ v of λ_rot·∠(R̂_uv, R_uv) + λ_trans·‖t̂_uv − t_uv‖₁.
inline double camera_loss(const Trajectory& pred, const Trajectory& gt, double lambda_rot, double lambda_trans) {
  if (pred.size() != gt.size()) throw Error(Errc::shape_mismatch, "camera_loss: trajectory length mismatch");
  const std::size_t n = pred.size();
  if (n < 2) throw Error(Errc::invalid_argument, "camera_loss: need at least 2 poses");
  double sum = 0.0;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v) {
      if (u == v) continue;
      const Pose ph = relative_pose(pred.poses[u], pred.poses[v]);
      const Pose pg = relative_pose(gt.poses[u], gt.poses[v]);
      sum += lambda_rot * geodesic_angle(ph.rotation, pg.rotation) +
             lambda_trans * (ph.translation - pg.translation).lpNorm<1>();
    }
  return sum / static_cast<double>(n * (n - 1));
}

/// |log ŝ − log(s*·norm(P)/norm(P̂))|
inline double scale_loss(double pred_scale, std::span<const Pointmap> pred, std::span<const Pointmap> gt) {
  if (!(pred_scale > 0.0)) throw Error(Errc::invalid_argument, "scale_loss: predicted scale must be positive");
  const PointmapAlignment a = align_normalized(pred, gt);
  return std::abs(std::log(pred_scale) - std::log(a.metric_scale()));
}

/// Angle between unit vectors, accurate near 0 and π.
inline double unit_angle(const Vec3& a, const Vec3& b) { return std::atan2(a.cross(b).norm(), a.dot(b)); }

/// Mean angle (radians) between predicted and ground-truth normals where both are valid.
inline double normal_loss(std::span<const Pointmap> pred, std::span<const Pointmap> gt) {
  check_same_shape(pred, gt);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    const NormalMap a = pointmap_normals(pred[f]);
    const NormalMap b = pointmap_normals(gt[f]);
    for (int r = 0; r < pred[f].rows(); ++r)
      for (int c = 0; c < pred[f].cols(); ++c)
        if (a.valid(r, c) && b.valid(r, c)) {
          sum += unit_angle(a.normals(r, c), b.normals(r, c));
          ++n;
        }
  }
  if (n == 0) throw Error(Errc::empty_overlap, "normal_loss: no pixel with both normals valid");
  return sum / static_cast<double>(n);
}

/// Scharr-x, Scharr-y (3-10-3, /32) and 4-neighbour Laplacian responses.
/// A response is valid only where its whole 3x3 support is valid.
struct FilterResponses {
  ScalarMap scharr_x;
  ScalarMap scharr_y;
  ScalarMap laplacian;
};

inline FilterResponses gradient_filters(const ScalarMap& d) {
  static constexpr std::array<std::array<double, 3>, 3> kScharrX{{{-3, 0, 3}, {-10, 0, 10}, {-3, 0, 3}}};
  static constexpr std::array<std::array<double, 3>, 3> kLaplace{{{0, 1, 0}, {1, -4, 1}, {0, 1, 0}}};
  const int rows = d.rows(), cols = d.cols();
  FilterResponses out{ScalarMap(rows, cols, 0.0, 0), ScalarMap(rows, cols, 0.0, 0), ScalarMap(rows, cols, 0.0, 0)};
  for (int r = 1; r + 1 < rows; ++r)
    for (int c = 1; c + 1 < cols; ++c) {
      bool ok = true;
      for (int dr = -1; dr <= 1 && ok; ++dr)
        for (int dc = -1; dc <= 1 && ok; ++dc) ok = d.valid(r + dr, c + dc);
      if (!ok) continue;
      double gx = 0.0, gy = 0.0, lap = 0.0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const double v = d.values(r + dr, c + dc);
          gx += kScharrX[dr + 1][dc + 1] * v;
          gy += kScharrX[dc + 1][dr + 1] * v;
          lap += kLaplace[dr + 1][dc + 1] * v;
        }
      out.scharr_x.values(r, c) = gx / 32.0;
      out.scharr_y.values(r, c) = gy / 32.0;
      out.laplacian.values(r, c) = lap;
      out.scharr_x.mask(r, c) = out.scharr_y.mask(r, c) = out.laplacian.mask(r, c) = 1;
    }
  return out;
}

/// 2x average pooling; an output pixel is valid only if all four inputs are. Odd edges are dropped.
inline ScalarMap avg_pool2(const ScalarMap& d) {
  ScalarMap out(d.rows() / 2, d.cols() / 2, 0.0, 0);
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c) {
      const int r0 = 2 * r, c0 = 2 * c;
      if (d.valid(r0, c0) && d.valid(r0, c0 + 1) && d.valid(r0 + 1, c0) && d.valid(r0 + 1, c0 + 1)) {
        out.values(r, c) =
            0.25 * (d.values(r0, c0) + d.values(r0, c0 + 1) + d.values(r0 + 1, c0) + d.values(r0 + 1, c0 + 1));
        out.mask(r, c) = 1;
      }
    }
  return out;
}

inline std::vector<int> default_gradient_scales() { return {1, 2, 4}; }

/// Multi-scale gradient-matching loss on (already canonical) inverse-depth fields.
///
/// Per scale: mean over pixels where all three filter responses are valid in both
/// fields of |Δscharr_x| + |Δscharr_y| + |Δlaplacian|. Scales without any such pixel
/// are skipped; the result is the mean over the remaining scales.
inline double gradient_loss_inverse_depth(std::span<const ScalarMap> pred, std::span<const ScalarMap> gt,
                                          std::span<const int> scales) {
  if (pred.size() != gt.size()) throw Error(Errc::shape_mismatch, "gradient_loss: frame count mismatch");
  if (scales.empty()) throw Error(Errc::invalid_argument, "gradient_loss: no scales");
  for (int s : scales)
    if (s != 1 && s != 2 && s != 4 && s != 8)
      throw Error(Errc::invalid_argument, "gradient_loss: scales must be drawn from {1,2,4,8}");

  double total = 0.0;
  int used_scales = 0;
  for (int s : scales) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t f = 0; f < pred.size(); ++f) {
      if (!pred[f].values.same_shape(gt[f].values)) throw Error(Errc::shape_mismatch, "gradient_loss: shape mismatch");
      ScalarMap a = pred[f], b = gt[f];
      for (int k = s; k > 1; k /= 2) {
        a = avg_pool2(a);
        b = avg_pool2(b);
      }
      const FilterResponses fa = gradient_filters(a);
      const FilterResponses fb = gradient_filters(b);
      for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c) {
          if (!fa.scharr_x.valid(r, c) || !fb.scharr_x.valid(r, c)) continue;
          sum += std::abs(fa.scharr_x.values(r, c) - fb.scharr_x.values(r, c)) +
                 std::abs(fa.scharr_y.values(r, c) - fb.scharr_y.values(r, c)) +
                 std::abs(fa.laplacian.values(r, c) - fb.laplacian.values(r, c));
          ++n;
        }
    }
    if (n == 0) continue;
    total += sum / static_cast<double>(n);
    ++used_scales;
  }
  if (used_scales == 0) throw Error(Errc::empty_overlap, "gradient_loss: no valid interior pixel at any scale");
  return total / used_scales;
}

/// Gradient loss on pointmaps: the prediction is brought to ground-truth units with the
/// robust scale, then both are converted to inverse depth normalised by the ground-truth
/// scene norm.
inline double gradient_loss(std::span<const Pointmap> pred, std::span<const Pointmap> gt,
                            std::span<const int> scales) {
  const PointmapAlignment a = align_normalized(pred, gt);
  const double m = a.metric_scale();
  std::vector<ScalarMap> dp, dg;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    Pointmap aligned = pred[f];
    for (auto& p : aligned.points.flat()) p *= m;
    dp.push_back(pointmap_to_inverse_depth(aligned, a.gt_norm));
    dg.push_back(pointmap_to_inverse_depth(gt[f], a.gt_norm));
  }
  return gradient_loss_inverse_depth(dp, dg, scales);
}

/// 1 − mean cosine similarity between projected student tokens and teacher tokens.
/// `projection` maps student channels to teacher channels (C_s × C_t). A token pair
/// containing a zero vector has similarity 0.
inline double distill_loss(const TokenGrid& student, const TokenGrid& teacher, const Matrix& projection) {
  student.validate();
  teacher.validate();
  if (projection.rows() != student.channels || projection.cols() != teacher.channels ||
      student.frame_count() != teacher.frame_count() || student.height != teacher.height ||
      student.width != teacher.width)
    throw Error(Errc::shape_mismatch, "distill_loss: projected student shape differs from teacher");
  double sum = 0.0;
  std::size_t n = 0;
  for (int f = 0; f < student.frame_count(); ++f) {
    const Matrix proj = student.frames[f] * projection;
    for (Eigen::Index t = 0; t < proj.rows(); ++t) {
      const double na = proj.row(t).norm();
      const double nb = teacher.frames[f].row(t).norm();
      if (na > 0.0 && nb > 0.0) sum += proj.row(t).dot(teacher.frames[f].row(t)) / (na * nb);
      ++n;
    }
  }
  if (n == 0) throw Error(Errc::empty_overlap, "distill_loss: no tokens");
  return 1.0 - sum / static_cast<double>(n);
}

/// Weighted sum Σ λ_term·term over all eight terms, with each weighted term exposed.
inline LossReport total_loss(const LossTerms& t, const LossConfig& cfg) {
  cfg.validate();
  for (double v : {t.pointmap, t.camera, t.translation, t.rotation, t.scale, t.normal, t.gradient, t.distill})
    if (!std::isfinite(v)) throw Error(Errc::invalid_argument, "total_loss: non-finite loss term");
  LossReport rep;
  rep.terms = t;
  rep.weighted = {cfg.pointmap * t.pointmap, cfg.camera * t.camera,   cfg.translation * t.translation,
                  cfg.rotation * t.rotation, cfg.scale * t.scale,     cfg.normal * t.normal,
                  cfg.gradient * t.gradient, cfg.distill * t.distill};
  const LossTerms& w = rep.weighted;
  rep.total = w.pointmap + w.camera + w.translation + w.rotation + w.scale + w.normal + w.gradient + w.distill;
  return rep;
}

}  // namespace geomeval
