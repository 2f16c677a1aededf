#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "geomeval/alignment.hpp"
#include "geomeval/error.hpp"
#include "geomeval/geometry.hpp"
#include "geomeval/image.hpp"
#include "geomeval/kdtree.hpp"
#include "geomeval/parallel.hpp"

namespace geomeval {

// ---------------------------------------------------------------------------
// Pointmap / depth accuracy

struct PointmapMetrics {
  double rel_p = 0.0;    // percent
  double delta_p = 0.0;  // percent of inliers
  std::size_t pixels = 0;
};

struct DepthMetrics {
  double rel_d = 0.0;
  double delta_d = 0.0;
  std::size_t pixels = 0;
};

/// Rel^p = mean ‖p̂−p‖/‖p‖ and δ^p = share of pixels with ‖p̂−p‖/min(‖p‖,‖p̂‖) < τ, both in
/// percent, over jointly valid pixels with ‖p‖ ≥ 1e-9. Alignment is the caller's job.
inline PointmapMetrics pointmap_metrics(std::span<const Pointmap> pred, std::span<const Pointmap> gt,
                                        double tau = 0.25) {
  check_same_shape(pred, gt);
  double rel = 0.0;
  std::size_t inliers = 0, n = 0;
  for (std::size_t f = 0; f < pred.size(); ++f)
    for (int r = 0; r < pred[f].rows(); ++r)
      for (int c = 0; c < pred[f].cols(); ++c) {
        if (!pred[f].valid(r, c) || !gt[f].valid(r, c)) continue;
        const Vec3& ph = pred[f](r, c);
        const Vec3& p = gt[f](r, c);
        const double np = p.norm();
        if (np < 1e-9) continue;
        const double err = (ph - p).norm();
        rel += err / np;
        if (err / std::min(np, ph.norm()) < tau) ++inliers;
        ++n;
      }
  if (n == 0) throw Error(Errc::empty_overlap, "pointmap_metrics: no jointly valid pixel");
  return {100.0 * rel / static_cast<double>(n), 100.0 * static_cast<double>(inliers) / static_cast<double>(n), n};
}

/// Scalar counterpart of pointmap_metrics on depth values.
inline DepthMetrics depth_metrics(std::span<const ScalarMap> pred, std::span<const ScalarMap> gt, double tau = 0.25) {
  if (pred.size() != gt.size()) throw Error(Errc::shape_mismatch, "frame count mismatch");
  double rel = 0.0;
  std::size_t inliers = 0, n = 0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    if (!pred[f].values.same_shape(gt[f].values)) throw Error(Errc::shape_mismatch, "depth shape mismatch");
    for (int r = 0; r < pred[f].rows(); ++r)
      for (int c = 0; c < pred[f].cols(); ++c) {
        if (!pred[f].valid(r, c) || !gt[f].valid(r, c)) continue;
        const double dh = pred[f].values(r, c);
        const double d = gt[f].values(r, c);
        const double nd = std::abs(d);
        if (nd < 1e-9) continue;
        const double err = std::abs(dh - d);
        rel += err / nd;
        if (err / std::min(nd, std::abs(dh)) < tau) ++inliers;
        ++n;
      }
  }
  if (n == 0) throw Error(Errc::empty_overlap, "depth_metrics: no jointly valid pixel");
  return {100.0 * rel / static_cast<double>(n), 100.0 * static_cast<double>(inliers) / static_cast<double>(n), n};
}

// ---------------------------------------------------------------------------
// Boundary sharpness

inline std::vector<double> default_f1_thresholds() { return {1.05, 1.10, 1.15, 1.20, 1.25}; }

struct BoundaryF1 {
  double f1 = 0.0;  // mean over thresholds
  std::vector<double> per_threshold;
  std::vector<double> precision;
  std::vector<double> recall;
  bool no_contour = false;  // some threshold had no predicted or no ground-truth contour
};

/// Occluding-contour F1 from neighbouring-pixel depth ratios.
///
/// For every horizontally or vertically adjacent pixel pair valid in both maps, a contour
/// is flagged when max(d_a, d_b)/min(d_a, d_b) > t. Precision and recall compare predicted
/// against ground-truth flags; F1 is 0 when P + R = 0.
inline BoundaryF1 boundary_f1_detail(const ScalarMap& pred, const ScalarMap& gt, std::span<const double> thresholds) {
  if (!pred.values.same_shape(gt.values)) throw Error(Errc::shape_mismatch, "boundary_f1: shape mismatch");
  if (pred.rows() < 2 || pred.cols() < 2) throw Error(Errc::invalid_argument, "boundary_f1: need at least 2x2");
  if (thresholds.empty()) throw Error(Errc::invalid_argument, "boundary_f1: no thresholds");

  auto ok = [&](int r, int c) {
    return pred.valid(r, c) && gt.valid(r, c) && pred.values(r, c) > 0.0 && gt.values(r, c) > 0.0;
  };
  auto ratio = [](double a, double b) { return std::max(a, b) / std::min(a, b); };

  struct PairRatios {
    double pred, gt;
  };
  std::vector<PairRatios> pairs;
  for (int r = 0; r < pred.rows(); ++r)
    for (int c = 0; c < pred.cols(); ++c) {
      if (!ok(r, c)) continue;
      if (c + 1 < pred.cols() && ok(r, c + 1))
        pairs.push_back({ratio(pred.values(r, c), pred.values(r, c + 1)), ratio(gt.values(r, c), gt.values(r, c + 1))});
      if (r + 1 < pred.rows() && ok(r + 1, c))
        pairs.push_back({ratio(pred.values(r, c), pred.values(r + 1, c)), ratio(gt.values(r, c), gt.values(r + 1, c))});
    }

  BoundaryF1 out;
  double sum = 0.0;
  for (double t : thresholds) {
    std::size_t np = 0, ng = 0, both = 0;
    for (const auto& p : pairs) {
      const bool a = p.pred > t, b = p.gt > t;
      np += a;
      ng += b;
      both += a && b;
    }
    const double precision = np ? static_cast<double>(both) / static_cast<double>(np) : 0.0;
    const double recall = ng ? static_cast<double>(both) / static_cast<double>(ng) : 0.0;
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    if (np == 0 || ng == 0) out.no_contour = true;
    out.precision.push_back(precision);
    out.recall.push_back(recall);
    out.per_threshold.push_back(f1);
    sum += f1;
  }
  out.f1 = sum / static_cast<double>(thresholds.size());
  return out;
}

inline double boundary_f1(const ScalarMap& pred, const ScalarMap& gt, std::span<const double> thresholds) {
  return boundary_f1_detail(pred, gt, thresholds).f1;
}

struct PdbeConfig {
  double canny_low = 0.1;
  double canny_high = 0.2;
  double blur_sigma = 1.0;
};

struct BoundaryMetrics {
  double f1 = 0.0;
  double pdbe_chamfer = 0.0;
  double pdbe_acc = 0.0;
  double pdbe_comp = 0.0;
};

/// Inverse depth min-max normalised to [0, 1] over valid pixels; invalid pixels are 0.
inline Grid<double> normalized_inverse_depth(const ScalarMap& depth) {
  Grid<double> out(depth.rows(), depth.cols(), 0.0);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int r = 0; r < depth.rows(); ++r)
    for (int c = 0; c < depth.cols(); ++c)
      if (depth.valid(r, c) && depth.values(r, c) > 0.0) {
        const double v = 1.0 / depth.values(r, c);
        out(r, c) = v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  const double range = hi - lo;
  for (int r = 0; r < depth.rows(); ++r)
    for (int c = 0; c < depth.cols(); ++c) {
      const bool v = depth.valid(r, c) && depth.values(r, c) > 0.0;
      out(r, c) = (v && range > 0.0) ? (out(r, c) - lo) / range : 0.0;
    }
  return out;
}

/// Canny edge set used by PDBE: normalised inverse depth, Gaussian blur, Canny.
inline Mask pdbe_edges(const ScalarMap& depth, const PdbeConfig& cfg) {
  return image::canny(image::gaussian_blur(normalized_inverse_depth(depth), cfg.blur_sigma), cfg.canny_low,
                      cfg.canny_high);
}

/// Accuracy (pred edges → nearest gt edge), completeness (reverse) and their mean, in pixels.
inline BoundaryMetrics chamfer_from_edges(const Mask& pred_edges, const Mask& gt_edges) {
  if (!pred_edges.same_shape(gt_edges)) throw Error(Errc::shape_mismatch, "pdbe: shape mismatch");
  auto mean_distance = [](const Mask& from, const Mask& to) {
    const Grid<double> dt = image::squared_distance_transform(to);
    double sum = 0.0;
    std::size_t n = 0;
    for (int r = 0; r < from.rows(); ++r)
      for (int c = 0; c < from.cols(); ++c)
        if (from(r, c)) {
          sum += std::sqrt(dt(r, c));
          ++n;
        }
    if (n == 0) throw Error(Errc::empty_overlap, "pdbe: edge map has no edge pixel");
    return sum / static_cast<double>(n);
  };
  BoundaryMetrics m;
  m.pdbe_acc = mean_distance(pred_edges, gt_edges);
  m.pdbe_comp = mean_distance(gt_edges, pred_edges);
  m.pdbe_chamfer = 0.5 * (m.pdbe_acc + m.pdbe_comp);
  return m;
}

/// Pseudo depth-boundary error between Canny edge sets of the two depth maps.
inline BoundaryMetrics pdbe(const ScalarMap& pred, const ScalarMap& gt, const PdbeConfig& cfg = {}) {
  if (!pred.values.same_shape(gt.values)) throw Error(Errc::shape_mismatch, "pdbe: shape mismatch");
  return chamfer_from_edges(pdbe_edges(pred, cfg), pdbe_edges(gt, cfg));
}

// ---------------------------------------------------------------------------
// Trajectories

struct TrajectoryMetrics {
  double ate = 0.0;    // metres, RMSE
  double rpe_t = 0.0;  // metres, RMSE
  double rpe_r = 0.0;  // degrees, RMSE
};

struct AteResult {
  double ate = 0.0;
  Sim3 alignment;  // maps predicted positions onto ground truth
};

namespace detail {
inline void check_trajectories(const Trajectory& pred, const Trajectory& gt) {
  if (pred.size() != gt.size()) throw Error(Errc::shape_mismatch, "trajectory length mismatch");
}
}  // namespace detail

/// RMSE between ground-truth camera positions and predicted ones after a Sim(3) Umeyama fit.
/// Collinear ground-truth positions leave the rotation undetermined and are rejected.
inline AteResult ate(const Trajectory& pred, const Trajectory& gt) {
  detail::check_trajectories(pred, gt);
  if (pred.size() < 3) throw Error(Errc::invalid_argument, "ate: need at least 3 poses");
  const auto ph = pred.positions();
  const auto pg = gt.positions();
  AteResult out;
  try {
    out.alignment = umeyama(ph, pg, true);
  } catch (const Error& e) {
    throw Error(Errc::degenerate, std::string("ate: degenerate trajectory: ") + e.what());
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < ph.size(); ++i) sum += (out.alignment * ph[i] - pg[i]).squaredNorm();
  out.ate = std::sqrt(sum / static_cast<double>(ph.size()));
  return out;
}

struct RpeResult {
  double rpe_t = 0.0;
  double rpe_r = 0.0;  // degrees
};

/// Relative pose error over frame pairs (i, i + delta). The prediction is first moved by
/// `pred_gauge` (normally the ATE Sim3) so translations are in ground-truth units.
inline RpeResult rpe(const Trajectory& pred, const Trajectory& gt, int delta, const Sim3& pred_gauge) {
  detail::check_trajectories(pred, gt);
  if (delta < 1 || static_cast<std::size_t>(delta) >= pred.size())
    throw Error(Errc::invalid_argument, "rpe: need length > delta >= 1");
  double st = 0.0, sr = 0.0;
  const std::size_t n = pred.size() - static_cast<std::size_t>(delta);
  for (std::size_t i = 0; i < n; ++i) {
    const Pose a0 = transform_pose(pred_gauge, pred.poses[i]);
    const Pose a1 = transform_pose(pred_gauge, pred.poses[i + delta]);
    const Pose mh = relative_pose(a0, a1);
    const Pose m = relative_pose(gt.poses[i], gt.poses[i + delta]);
    const Pose e = compose(pose_inverse(m), mh);
    st += e.translation.squaredNorm();
    const double ang = geodesic_angle(Mat3::Identity(), e.rotation) * 180.0 / std::numbers::pi;
    sr += ang * ang;
  }
  return {std::sqrt(st / static_cast<double>(n)), std::sqrt(sr / static_cast<double>(n))};
}

/// RPE with the prediction pre-aligned by its ATE Sim(3).
inline RpeResult rpe(const Trajectory& pred, const Trajectory& gt, int delta = 1) {
  return rpe(pred, gt, delta, ate(pred, gt).alignment);
}

inline TrajectoryMetrics trajectory_metrics(const Trajectory& pred, const Trajectory& gt, int delta = 1) {
  const AteResult a = ate(pred, gt);
  const RpeResult r = rpe(pred, gt, delta, a.alignment);
  return {a.ate, r.rpe_t, r.rpe_r};
}

// ---------------------------------------------------------------------------
// Reconstruction

struct ReconMetrics {
  double acc = 0.0;
  double comp = 0.0;
  double nc = 0.0;
  std::size_t mutual_pairs = 0;
};

/// PCA normal per point over its k nearest neighbours (the point included), oriented so
/// that n·(viewpoint − p) ≥ 0.
inline std::vector<Vec3> estimate_normals(const std::vector<Vec3>& cloud, const KdTree& tree, int k,
                                          const Vec3& viewpoint = Vec3::Zero()) {
  std::vector<Vec3> normals(cloud.size());
  parallel_for(cloud.size(), [&](std::size_t i) {
    const auto nbs = tree.knn(cloud[i], static_cast<std::size_t>(k));
    Vec3 mean = Vec3::Zero();
    for (const auto& nb : nbs) mean += cloud[nb.index];
    mean /= static_cast<double>(nbs.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& nb : nbs) {
      const Vec3 d = cloud[nb.index] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    Vec3 n = eig.eigenvectors().col(0);
    if (n.dot(viewpoint - cloud[i]) < 0.0) n = -n;
    normals[i] = n;
  });
  return normals;
}

/// Accuracy, completeness (mean nearest-neighbour distances) and normal consistency
/// (mean |n̂·n| over mutually nearest pairs). Alignment is the caller's job.
inline ReconMetrics recon_metrics(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt, int k_normals = 20,
                                  const Vec3& viewpoint = Vec3::Zero()) {
  if (k_normals < 3) throw Error(Errc::invalid_argument, "recon_metrics: k_normals must be >= 3");
  const std::size_t need = static_cast<std::size_t>(k_normals) + 1;
  if (pred.size() < need || gt.size() < need)
    throw Error(Errc::empty_overlap, "recon_metrics: insufficient points for normal estimation");

  const KdTree pred_tree(pred);
  const KdTree gt_tree(gt);
  std::vector<Neighbor> p2g(pred.size()), g2p(gt.size());
  parallel_for(pred.size(), [&](std::size_t i) { p2g[i] = gt_tree.nearest(pred[i]); });
  parallel_for(gt.size(), [&](std::size_t i) { g2p[i] = pred_tree.nearest(gt[i]); });

  ReconMetrics m;
  double sum = 0.0;
  for (const auto& nb : p2g) sum += std::sqrt(nb.squared_distance);
  m.acc = sum / static_cast<double>(pred.size());
  sum = 0.0;
  for (const auto& nb : g2p) sum += std::sqrt(nb.squared_distance);
  m.comp = sum / static_cast<double>(gt.size());

  const auto pn = estimate_normals(pred, pred_tree, k_normals, viewpoint);
  const auto gn = estimate_normals(gt, gt_tree, k_normals, viewpoint);
  sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t j = p2g[i].index;
    if (g2p[j].index != i) continue;
    sum += std::abs(pn[i].dot(gn[j]));
    ++m.mutual_pairs;
  }
  m.nc = m.mutual_pairs ? sum / static_cast<double>(m.mutual_pairs) : 0.0;
  return m;
}

}  // namespace geomeval
