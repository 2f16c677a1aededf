#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "geomeval/alignment.hpp"
#include "geomeval/error.hpp"
#include "geomeval/geometry.hpp"
#include "geomeval/losses.hpp"
#include "geomeval/metrics.hpp"
#include "geomeval/tokens.hpp"

// Evaluation protocols composed from the solvers and metrics. The command-line tool is a
// thin wrapper over these functions.
namespace geomeval::eval {

enum class DepthAlign { affine, scale, metric };

inline DepthAlign parse_depth_align(std::string_view s) {
  if (s == "affine") return DepthAlign::affine;
  if (s == "scale") return DepthAlign::scale;
  if (s == "metric") return DepthAlign::metric;
  throw Error(Errc::parse, "unknown alignment '" + std::string(s) + "'");
}

inline std::string_view to_string(DepthAlign a) {
  switch (a) {
    case DepthAlign::affine: return "affine";
    case DepthAlign::scale: return "scale";
    case DepthAlign::metric: return "metric";
  }
  return "?";
}

namespace detail {

inline ScalarMap inverse_depth(const ScalarMap& d) {
  ScalarMap out(d.rows(), d.cols(), 0.0, 0);
  for (int r = 0; r < d.rows(); ++r)
    for (int c = 0; c < d.cols(); ++c)
      if (d.valid(r, c) && d.values(r, c) > 1e-9) {
        out.values(r, c) = 1.0 / d.values(r, c);
        out.mask(r, c) = 1;
      }
  return out;
}

inline std::vector<ScalarMap> inverse_depths(std::span<const ScalarMap> maps) {
  std::vector<ScalarMap> out;
  for (const auto& m : maps) out.push_back(inverse_depth(m));
  return out;
}

inline std::vector<ScalarMap> depths_of(std::span<const Pointmap> maps) {
  std::vector<ScalarMap> out;
  for (const auto& m : maps) out.push_back(pointmap_depth(m));
  return out;
}

// Aligned depth 1/(a/d̂ + b); pixels whose aligned inverse depth is not positive become invalid.
inline double affine_inverse_depth(const AffineAlign& a, double depth) {
  const double inv = a.apply(1.0 / depth);
  return inv > 1e-12 ? 1.0 / inv : 0.0;
}

}  // namespace detail

struct PointmapEval {
  PointmapMetrics metrics;
  AffineAlign alignment;  // scale only for "scale"; identity for "metric"
};

/// affine: one shared scale and shift fitted on inverse depth, applied along each pixel ray.
/// scale: one shared robust scale. metric: no alignment.
inline std::vector<Pointmap> align_pointmaps(std::span<const Pointmap> pred, std::span<const Pointmap> gt,
                                             DepthAlign mode, bool robust, AffineAlign* fitted = nullptr) {
  check_same_shape(pred, gt);
  std::vector<Pointmap> out(pred.begin(), pred.end());
  AffineAlign a;
  switch (mode) {
    case DepthAlign::metric: break;
    case DepthAlign::scale: {
      a.scale = roe_scale(pred, gt);
      for (auto& m : out)
        for (auto& p : m.points.flat()) p *= a.scale;
      break;
    }
    case DepthAlign::affine: {
      const auto pd = detail::inverse_depths(detail::depths_of(pred));
      const auto gd = detail::inverse_depths(detail::depths_of(gt));
      a = affine_align_depth(pd, gd, robust);
      for (auto& m : out)
        for (int r = 0; r < m.rows(); ++r)
          for (int c = 0; c < m.cols(); ++c) {
            const double z = m(r, c).z();
            if (!m.valid(r, c) || !(z > 1e-9)) {
              m.mask(r, c) = 0;
              continue;
            }
            const double z2 = detail::affine_inverse_depth(a, z);
            if (z2 > 0.0) m(r, c) *= z2 / z;
            else m.mask(r, c) = 0;
          }
      break;
    }
  }
  if (fitted) *fitted = a;
  return out;
}

inline PointmapEval evaluate_pointmaps(std::span<const Pointmap> pred, std::span<const Pointmap> gt, DepthAlign mode,
                                       double tau, bool robust = false) {
  PointmapEval e;
  const auto aligned = align_pointmaps(pred, gt, mode, robust, &e.alignment);
  e.metrics = pointmap_metrics(aligned, gt, tau);
  return e;
}

struct DepthEval {
  DepthMetrics metrics;
  AffineAlign alignment;
};

inline std::vector<ScalarMap> align_depths(std::span<const ScalarMap> pred, std::span<const ScalarMap> gt,
                                           DepthAlign mode, bool robust, AffineAlign* fitted = nullptr) {
  if (pred.size() != gt.size()) throw Error(Errc::shape_mismatch, "frame count mismatch");
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (!pred[i].values.same_shape(gt[i].values)) throw Error(Errc::shape_mismatch, "depth shape mismatch");
  std::vector<ScalarMap> out(pred.begin(), pred.end());
  AffineAlign a;
  switch (mode) {
    case DepthAlign::metric: break;
    case DepthAlign::scale: {
      a.scale = roe_scale_depth(pred, gt);
      for (auto& m : out)
        for (auto& v : m.values.flat()) v *= a.scale;
      break;
    }
    case DepthAlign::affine: {
      a = affine_align_depth(detail::inverse_depths(pred), detail::inverse_depths(gt), robust);
      for (auto& m : out)
        for (int r = 0; r < m.rows(); ++r)
          for (int c = 0; c < m.cols(); ++c) {
            const double z = m.values(r, c);
            if (!m.valid(r, c) || !(z > 1e-9)) {
              m.mask(r, c) = 0;
              continue;
            }
            const double z2 = detail::affine_inverse_depth(a, z);
            if (z2 > 0.0) m.values(r, c) = z2;
            else m.mask(r, c) = 0;
          }
      break;
    }
  }
  if (fitted) *fitted = a;
  return out;
}

inline DepthEval evaluate_depths(std::span<const ScalarMap> pred, std::span<const ScalarMap> gt, DepthAlign mode,
                                 double tau, bool robust = false) {
  DepthEval e;
  const auto aligned = align_depths(pred, gt, mode, robust, &e.alignment);
  e.metrics = depth_metrics(aligned, gt, tau);
  return e;
}

struct BoundaryEval {
  double f1 = 0.0;            // mean over frames
  double pdbe_chamfer = 0.0;  // mean over frames where both edge maps are non-empty
  double pdbe_acc = 0.0;
  double pdbe_comp = 0.0;
  std::size_t frames = 0;
  std::size_t pdbe_frames = 0;
  std::size_t no_contour_frames = 0;
};

inline BoundaryEval evaluate_boundaries(std::span<const ScalarMap> pred, std::span<const ScalarMap> gt,
                                        std::span<const double> thresholds, const PdbeConfig& cfg) {
  if (pred.size() != gt.size()) throw Error(Errc::shape_mismatch, "frame count mismatch");
  if (pred.empty()) throw Error(Errc::empty_overlap, "no frames");
  BoundaryEval e;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const BoundaryF1 f = boundary_f1_detail(pred[i], gt[i], thresholds);
    e.f1 += f.f1;
    e.no_contour_frames += f.no_contour;
    const Mask pe = pdbe_edges(pred[i], cfg), ge = pdbe_edges(gt[i], cfg);
    auto any = [](const Mask& m) {
      for (auto v : m.flat())
        if (v) return true;
      return false;
    };
    if (any(pe) && any(ge)) {
      const BoundaryMetrics b = chamfer_from_edges(pe, ge);
      e.pdbe_chamfer += b.pdbe_chamfer;
      e.pdbe_acc += b.pdbe_acc;
      e.pdbe_comp += b.pdbe_comp;
      ++e.pdbe_frames;
    }
  }
  e.frames = pred.size();
  e.f1 /= static_cast<double>(e.frames);
  if (e.pdbe_frames) {
    const double n = static_cast<double>(e.pdbe_frames);
    e.pdbe_chamfer /= n;
    e.pdbe_acc /= n;
    e.pdbe_comp /= n;
  }
  return e;
}

enum class ReconAlign { sim3, se3, none };

inline ReconAlign parse_recon_align(std::string_view s) {
  if (s == "sim3") return ReconAlign::sim3;
  if (s == "se3") return ReconAlign::se3;
  if (s == "none") return ReconAlign::none;
  throw Error(Errc::parse, "unknown alignment '" + std::string(s) + "'");
}

inline std::string_view to_string(ReconAlign a) {
  switch (a) {
    case ReconAlign::sim3: return "sim3";
    case ReconAlign::se3: return "se3";
    case ReconAlign::none: return "none";
  }
  return "?";
}

struct ReconConfig {
  ReconAlign align = ReconAlign::sim3;
  bool icp = true;
  IcpConfig icp_cfg;
  int k_normals = 20;
  int stride = 1;
};

struct ReconEval {
  ReconMetrics metrics;
  Sim3 alignment;
  std::size_t points = 0;
  int icp_iterations = 0;
};

/// Point clouds from jointly valid pixels (every `stride`-th row and column), lifted to world
/// coordinates when trajectories are given. Index i of both clouds is the same pixel.
inline std::pair<PointSet, PointSet> paired_clouds(std::span<const Pointmap> pred, std::span<const Pointmap> gt,
                                                   const Trajectory* pred_traj, const Trajectory* gt_traj,
                                                   int stride) {
  check_same_shape(pred, gt);
  if (stride < 1) throw Error(Errc::invalid_argument, "stride must be >= 1");
  if ((pred_traj && pred_traj->size() != pred.size()) || (gt_traj && gt_traj->size() != gt.size()))
    throw Error(Errc::shape_mismatch, "trajectory length differs from frame count");
  PointSet a, b;
  for (std::size_t f = 0; f < pred.size(); ++f)
    for (int r = 0; r < pred[f].rows(); r += stride)
      for (int c = 0; c < pred[f].cols(); c += stride) {
        if (!pred[f].valid(r, c) || !gt[f].valid(r, c)) continue;
        a.push_back(pred_traj ? pred_traj->poses[f] * pred[f](r, c) : pred[f](r, c));
        b.push_back(gt_traj ? gt_traj->poses[f] * gt[f](r, c) : gt[f](r, c));
      }
  if (a.empty()) throw Error(Errc::empty_overlap, "no jointly valid pixels");
  return {std::move(a), std::move(b)};
}

/// Umeyama on pixel correspondences (with or without scale), optional ICP refinement, then
/// accuracy / completeness / normal consistency.
inline ReconEval evaluate_recon(std::span<const Pointmap> pred, std::span<const Pointmap> gt,
                                const Trajectory* pred_traj, const Trajectory* gt_traj, const ReconConfig& cfg) {
  auto [src, dst] = paired_clouds(pred, gt, pred_traj, gt_traj, cfg.stride);
  ReconEval e;
  e.points = src.size();
  if (cfg.align != ReconAlign::none) {
    e.alignment = umeyama(src, dst, cfg.align == ReconAlign::sim3);
    if (cfg.icp) {
      const IcpResult icp = icp_refine(src, dst, e.alignment, cfg.icp_cfg);
      e.alignment = icp.transform;
      e.icp_iterations = icp.iterations;
    }
  }
  e.metrics = recon_metrics(apply_sim3(e.alignment, src), dst, cfg.k_normals);
  return e;
}

struct DistillInputs {
  TokenGrid student;
  TokenGrid teacher;
  Matrix projection;
};

struct LossInputs {
  std::span<const Pointmap> pred;
  std::span<const Pointmap> gt;
  const Trajectory* pred_traj = nullptr;
  const Trajectory* gt_traj = nullptr;
  std::optional<double> pred_scale;
  const DistillInputs* distill = nullptr;
  std::vector<int> gradient_scales = default_gradient_scales();
};

struct LossEval {
  LossReport report;
  // Unweighted pair means behind the camera term; diagnostics only.
  std::optional<double> rotation_mean;
  std::optional<double> translation_mean;
  bool has_camera = false, has_scale = false, has_distill = false;
};

/// All loss terms that the inputs support. The camera term carries its rotation and
/// translation weights internally, so the separate rotation/translation slots stay 0.
inline LossEval evaluate_losses(const LossInputs& in, const LossConfig& cfg) {
  cfg.validate();
  LossEval e;
  LossTerms t;
  t.pointmap = pointmap_loss(in.pred, in.gt);
  t.normal = normal_loss(in.pred, in.gt);
  t.gradient = gradient_loss(in.pred, in.gt, in.gradient_scales);
  if (in.pred_traj && in.gt_traj) {
    t.camera = camera_loss(*in.pred_traj, *in.gt_traj, cfg.rotation, cfg.translation);
    e.rotation_mean = camera_loss(*in.pred_traj, *in.gt_traj, 1.0, 0.0);
    e.translation_mean = camera_loss(*in.pred_traj, *in.gt_traj, 0.0, 1.0);
    e.has_camera = true;
  }
  if (in.pred_scale) {
    t.scale = scale_loss(*in.pred_scale, in.pred, in.gt);
    e.has_scale = true;
  }
  if (in.distill) {
    t.distill = distill_loss(in.distill->student, in.distill->teacher, in.distill->projection);
    e.has_distill = true;
  }
  e.report = total_loss(t, cfg);
  return e;
}

}  // namespace geomeval::eval
