#pragma once

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "geomeval/error.hpp"
#include "geomeval/geometry.hpp"
#include "geomeval/kdtree.hpp"

namespace geomeval {

struct AffineAlign {
  double scale = 1.0;
  double shift = 0.0;
  double apply(double x) const { return scale * x + shift; }
};

struct IcpConfig {
  int max_iterations = 50;
  double convergence_tol = 1e-10;
  double max_correspondence_dist = 0.05;
};

struct IcpResult {
  Sim3 transform;            // refinement ∘ init
  Pose refinement;           // rigid correction found by ICP
  std::vector<double> residuals;  // truncated mean squared distance before each step, plus final
  int iterations = 0;
  std::size_t final_pairs = 0;
};

namespace detail {

struct WeightedRatio {
  double ratio;
  double weight;
};

/// Lower weighted median: smallest ratio whose cumulative weight reaches half the total.
/// It minimises Σ wᵢ·|s − rᵢ| exactly.
inline double weighted_median(std::vector<WeightedRatio> items) {
  std::sort(items.begin(), items.end(), [](const WeightedRatio& a, const WeightedRatio& b) {
    return a.ratio < b.ratio || (a.ratio == b.ratio && a.weight < b.weight);
  });
  double total = 0.0;
  for (const auto& it : items) total += it.weight;
  const double half = 0.5 * total;
  double cum = 0.0;
  for (const auto& it : items) {
    cum += it.weight;
    if (cum >= half) return it.ratio;
  }
  return items.back().ratio;
}

// Items hold prediction/reference ratios weighted by |reference|; s* is the reciprocal
// of their weighted median.
inline double finish_roe(std::vector<WeightedRatio> items, std::size_t pixels, bool any_pred) {
  if (pixels == 0) throw Error(Errc::empty_overlap, "roe_scale: no jointly valid pixel");
  if (!any_pred) throw Error(Errc::degenerate, "roe_scale: prediction is zero on every valid pixel");
  if (items.empty()) throw Error(Errc::degenerate, "roe_scale: reference is zero on every valid pixel");
  const double t = weighted_median(std::move(items));
  if (!(t > 0.0)) throw Error(Errc::degenerate, "roe_scale: optimal scale is not positive");
  return 1.0 / t;
}

}  // namespace detail

/// Robust scale s* aligning p̂ to p under an ℓ₁ objective.
///
/// Solved as min over t = 1/s of Σ‖p̂ − t·p‖₁. Per coordinate this is |pᶜ|·|t − p̂ᶜ/pᶜ|, so
/// t* is the weighted median of the coordinate ratios with weights |pᶜ| (coordinates with
/// |pᶜ| ≤ 1e-9 carry no weight). The weights never depend on the prediction, so corrupted
/// predictions cannot outvote the reference however large they are.
inline double roe_scale(std::span<const Pointmap> pred, std::span<const Pointmap> gt) {
  check_same_shape(pred, gt);
  std::vector<detail::WeightedRatio> items;
  std::size_t pixels = 0;
  bool any_pred = false;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    const Pointmap& a = pred[f];
    const Pointmap& b = gt[f];
    for (int r = 0; r < a.rows(); ++r)
      for (int c = 0; c < a.cols(); ++c) {
        if (!a.valid(r, c) || !b.valid(r, c)) continue;
        ++pixels;
        for (int k = 0; k < 3; ++k) {
          const double x = a(r, c)[k];
          const double y = b(r, c)[k];
          any_pred = any_pred || std::abs(x) > 1e-9;
          if (std::abs(y) > 1e-9) items.push_back({x / y, std::abs(y)});
        }
      }
  }
  return detail::finish_roe(std::move(items), pixels, any_pred);
}

/// Scalar counterpart of roe_scale for depth maps.
inline double roe_scale_depth(std::span<const ScalarMap> pred, std::span<const ScalarMap> gt) {
  if (pred.size() != gt.size()) throw Error(Errc::shape_mismatch, "frame count mismatch");
  std::vector<detail::WeightedRatio> items;
  std::size_t pixels = 0;
  bool any_pred = false;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    if (!pred[f].values.same_shape(gt[f].values)) throw Error(Errc::shape_mismatch, "depth shape mismatch");
    for (int r = 0; r < pred[f].rows(); ++r)
      for (int c = 0; c < pred[f].cols(); ++c) {
        if (!pred[f].valid(r, c) || !gt[f].valid(r, c)) continue;
        ++pixels;
        const double x = pred[f].values(r, c);
        const double y = gt[f].values(r, c);
        any_pred = any_pred || std::abs(x) > 1e-9;
        if (std::abs(y) > 1e-9) items.push_back({x / y, std::abs(y)});
      }
  }
  return detail::finish_roe(std::move(items), pixels, any_pred);
}

namespace detail {

inline AffineAlign weighted_line_fit(std::span<const double> x, std::span<const double> y,
                                     std::span<const double> w) {
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
  }
  const double mx = sx / sw;
  const double my = sy / sw;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    sxx += w[i] * dx * dx;
    sxy += w[i] * dx * (y[i] - my);
  }
  if (!(sxx > 1e-300) || !(sxx > 1e-24 * sw * (1.0 + mx * mx)))
    throw Error(Errc::degenerate, "affine_align_depth: predicted depths are constant (rank deficient)");
  const double a = sxy / sxx;
  return {a, my - a * mx};
}

}  // namespace detail

/// Shared scale and shift mapping predicted depth onto ground truth over all frames.
/// Least squares when !robust; otherwise an L1 fit by iteratively reweighted least squares
/// (50 iterations, residual weight floor 1e-6) started from the least-squares solution.
inline AffineAlign affine_align_depth(std::span<const ScalarMap> pred, std::span<const ScalarMap> gt, bool robust) {
  if (pred.size() != gt.size()) throw Error(Errc::shape_mismatch, "frame count mismatch");
  std::vector<double> x, y;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    if (!pred[f].values.same_shape(gt[f].values)) throw Error(Errc::shape_mismatch, "depth shape mismatch");
    for (int r = 0; r < pred[f].rows(); ++r)
      for (int c = 0; c < pred[f].cols(); ++c)
        if (pred[f].valid(r, c) && gt[f].valid(r, c)) {
          x.push_back(pred[f].values(r, c));
          y.push_back(gt[f].values(r, c));
        }
  }
  if (x.size() < 2) throw Error(Errc::empty_overlap, "affine_align_depth: fewer than 2 valid pixels");
  std::vector<double> w(x.size(), 1.0);
  AffineAlign fit = detail::weighted_line_fit(x, y, w);
  if (robust) {
    constexpr int kIterations = 50;
    constexpr double kFloor = 1e-6;
    for (int it = 0; it < kIterations; ++it) {
      for (std::size_t i = 0; i < x.size(); ++i) w[i] = 1.0 / std::max(std::abs(fit.apply(x[i]) - y[i]), kFloor);
      fit = detail::weighted_line_fit(x, y, w);
    }
  }
  if (!(fit.scale > 0.0)) throw Error(Errc::degenerate, "affine_align_depth: no positive-scale solution");
  return fit;
}

inline PointSet apply_sim3(const Sim3& t, std::span<const Vec3> points) {
  PointSet out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(t * p);
  return out;
}

/// Closed-form least-squares similarity (or rigid, scale = 1) transform with dst ≈ T(src).
/// A source covariance of rank < 2 is rejected: the rotation about the line is undetermined.
inline Sim3 umeyama(std::span<const Vec3> src, std::span<const Vec3> dst, bool with_scale) {
  if (src.size() != dst.size()) throw Error(Errc::shape_mismatch, "umeyama: correspondence count mismatch");
  if (src.size() < 3) throw Error(Errc::degenerate, "umeyama: need at least 3 correspondences");
  const double n = static_cast<double>(src.size());

  Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= n;
  mu_d /= n;

  Mat3 cov = Mat3::Zero();     // (1/n) Σ d̄ s̄ᵀ
  Mat3 src_cov = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3 s = src[i] - mu_s;
    cov += (dst[i] - mu_d) * s.transpose();
    src_cov += s * s.transpose();
  }
  cov /= n;
  src_cov /= n;
  const double var_src = src_cov.trace();

  Eigen::SelfAdjointEigenSolver<Mat3> eig(src_cov, Eigen::EigenvaluesOnly);
  const Vec3 ev = eig.eigenvalues();  // ascending
  if (!(ev[2] > 1e-300) || !(ev[1] > 1e-12 * ev[2]))
    throw Error(Errc::degenerate, "umeyama: source points are collinear or coincident");

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 s_diag = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s_diag[2] = -1.0;

  Sim3 out;
  out.rotation = svd.matrixU() * s_diag.asDiagonal() * svd.matrixV().transpose();
  out.scale = with_scale ? svd.singularValues().dot(s_diag) / var_src : 1.0;
  if (!(out.scale > 0.0)) throw Error(Errc::degenerate, "umeyama: non-positive scale");
  out.translation = mu_d - out.scale * (out.rotation * mu_s);
  return out;
}

/// Point-to-point ICP refining the rigid part of `init`.
///
/// Each source point costs min(d², cap²) where d is the distance to its nearest
/// destination point, and the recorded residual is the mean of that cost. Pairs
/// within the cap drive a rigid Umeyama update. Both the update and the re-matching
/// can only lower this truncated objective; a step that would raise it (rounding)
/// is rejected and iteration stops, so the residual sequence is non-increasing.
inline IcpResult icp_refine(std::span<const Vec3> src, std::span<const Vec3> dst, const Sim3& init,
                            const IcpConfig& cfg) {
  if (cfg.max_iterations < 1) throw Error(Errc::invalid_argument, "icp: max_iterations must be >= 1");
  if (!(cfg.convergence_tol > 0.0) || !(cfg.max_correspondence_dist > 0.0))
    throw Error(Errc::invalid_argument, "icp: tolerances must be positive");
  if (src.empty() || dst.empty()) throw Error(Errc::empty_overlap, "icp: empty point set");

  const KdTree tree(std::vector<Vec3>(dst.begin(), dst.end()));
  const double cap2 = cfg.max_correspondence_dist * cfg.max_correspondence_dist;
  const PointSet base = apply_sim3(init, src);

  struct Matching {
    double residual = 0.0;
    std::vector<Vec3> from, to;
  };
  auto match = [&](const Pose& refinement) {
    Matching m;
    double sum = 0.0;
    for (const auto& p0 : base) {
      const Vec3 p = refinement * p0;
      const Neighbor nb = tree.nearest(p);
      if (nb.squared_distance <= cap2) {
        sum += nb.squared_distance;
        m.from.push_back(p);
        m.to.push_back(dst[nb.index]);
      } else {
        sum += cap2;
      }
    }
    m.residual = sum / static_cast<double>(base.size());
    return m;
  };

  IcpResult result;
  Pose refinement = Pose::identity();
  Matching current = match(refinement);
  if (current.from.empty()) throw Error(Errc::empty_overlap, "icp: no correspondence within max_correspondence_dist");
  result.residuals.push_back(current.residual);

  for (int it = 0; it < cfg.max_iterations; ++it) {
    if (current.from.size() < 3) break;
    Pose step;
    try {
      step = umeyama(current.from, current.to, false).rigid();
    } catch (const Error&) {
      break;  // matched subset became degenerate
    }
    const Pose candidate = compose(step, refinement);
    Matching next = match(candidate);
    if (next.residual > current.residual) break;
    refinement = candidate;
    const double change = current.residual - next.residual;
    current = std::move(next);
    result.residuals.push_back(current.residual);
    result.iterations = it + 1;
    if (change < cfg.convergence_tol) break;
  }

  result.refinement = refinement;
  result.transform = compose(Sim3::from_pose(refinement), init);
  result.final_pairs = current.from.size();
  return result;
}

}  // namespace geomeval
