// geomeval: synthetic scenes and evaluation protocols for 4-D geometry predictions.
//
// Every evaluation prints one JSON record on stdout holding the effective configuration
// and the results. Exit codes: 0 ok, 2 parse/IO error, 3 shape mismatch, 4 empty overlap,
// 5 any other failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "geomeval/geomeval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace geomeval;

namespace {

int exit_code(Errc e) {
  switch (e) {
    case Errc::parse:
    case Errc::io: return 2;
    case Errc::shape_mismatch: return 3;
    case Errc::empty_overlap: return 4;
    default: return 5;
  }
}

void emit(const json& j) { std::cout << j.dump() << '\n'; }

json sim3_json(const Sim3& s) {
  json r = json::array();
  for (int i = 0; i < 3; ++i) r.push_back({s.rotation(i, 0), s.rotation(i, 1), s.rotation(i, 2)});
  return {{"scale", s.scale},
          {"rotation", r},
          {"translation", {s.translation.x(), s.translation.y(), s.translation.z()}}};
}

std::string scene_files(const fs::path& dir, const char* stem, const char* ext) {
  return (dir / (std::string(stem) + ext)).string();
}

// ----------------------------------------------------------------------------------------
struct SynthArgs {
  std::string spec, out_dir;
};

int run_synth(const SynthArgs& a) {
  const auto job = io::parse_synth_spec(io::read_text(a.spec), a.spec);
  const fs::path dir(a.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::io, "cannot create " + dir.string() + ": " + ec.message());

  const synth::SceneData data = synth::generate(job.scene);
  io::write_gpm(dir / "gt.gpm", data.pointmaps);
  io::write_gdm(dir / "gt.gdm", data.depths);
  io::write_trajectory(dir / "gt_traj.txt", data.trajectory);

  const auto& s = job.scene;
  json manifest = {{"seed", s.seed},
                   {"n_frames", s.n_frames},
                   {"height", s.rows},
                   {"width", s.cols},
                   {"surface", synth::to_string(s.surface)},
                   {"trajectory", synth::to_string(s.trajectory)},
                   {"metric_scale", data.metric_scale},
                   {"files", {{"pointmaps", "gt.gpm"}, {"depths", "gt.gdm"}, {"trajectory", "gt_traj.txt"}}}};
  if (job.corruption) {
    const auto& c = *job.corruption;
    const synth::CorruptedScene cs = synth::corrupt(data, c, job.corruption_seed);
    io::write_gpm(dir / "pred.gpm", cs.data.pointmaps);
    io::write_gdm(dir / "pred.gdm", cs.data.depths);
    io::write_trajectory(dir / "pred_traj.txt", cs.data.trajectory);
    json corr = {{"seed", job.corruption_seed},
                 {"noise_sigma", c.gaussian_sigma},
                 {"outlier_fraction", c.outlier_fraction},
                 {"outlier_magnitude", c.outlier_magnitude},
                 {"outlier_count", cs.outlier_count},
                 {"files", {{"pointmaps", "pred.gpm"}, {"depths", "pred.gdm"}, {"trajectory", "pred_traj.txt"}}}};
    if (c.global_sim3) corr["gauge"] = sim3_json(*c.global_sim3);
    if (c.per_frame_jitter)
      corr["jitter"] = {{"rotation_rad", c.per_frame_jitter->rotation_rad},
                        {"translation", c.per_frame_jitter->translation}};
    manifest["corruption"] = corr;
  }
  io::atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
  emit({{"command", "synth"}, {"spec", a.spec}, {"out_dir", a.out_dir}, {"manifest", manifest}});
  return 0;
}

// ----------------------------------------------------------------------------------------
struct DenseArgs {
  std::string pred, gt, align = "scale";
  double tau = 0.25;
  bool robust = false;
};

json alignment_json(const AffineAlign& a) { return {{"scale", a.scale}, {"shift", a.shift}}; }

int run_eval_pointmap(const DenseArgs& a) {
  const auto mode = eval::parse_depth_align(a.align);
  const auto pred = io::read_gpm(a.pred), gt = io::read_gpm(a.gt);
  const auto e = eval::evaluate_pointmaps(pred, gt, mode, a.tau, a.robust);
  emit({{"command", "eval-pointmap"},
        {"pred", a.pred},
        {"gt", a.gt},
        {"align", eval::to_string(mode)},
        {"tau", a.tau},
        {"robust", a.robust},
        {"alignment", alignment_json(e.alignment)},
        {"rel_p", e.metrics.rel_p},
        {"delta_p", e.metrics.delta_p},
        {"pixels", e.metrics.pixels}});
  return 0;
}

int run_eval_depth(const DenseArgs& a) {
  const auto mode = eval::parse_depth_align(a.align);
  const auto pred = io::read_gdm(a.pred), gt = io::read_gdm(a.gt);
  const auto e = eval::evaluate_depths(pred, gt, mode, a.tau, a.robust);
  emit({{"command", "eval-depth"},
        {"pred", a.pred},
        {"gt", a.gt},
        {"align", eval::to_string(mode)},
        {"tau", a.tau},
        {"robust", a.robust},
        {"alignment", alignment_json(e.alignment)},
        {"rel_d", e.metrics.rel_d},
        {"delta_d", e.metrics.delta_d},
        {"pixels", e.metrics.pixels}});
  return 0;
}

// ----------------------------------------------------------------------------------------
struct BoundaryArgs {
  std::string pred, gt;
  std::vector<double> thresholds = default_f1_thresholds();
  PdbeConfig pdbe;
};

int run_eval_boundary(const BoundaryArgs& a) {
  const auto pred = io::read_gdm(a.pred), gt = io::read_gdm(a.gt);
  const auto e = eval::evaluate_boundaries(pred, gt, a.thresholds, a.pdbe);
  json j = {{"command", "eval-boundary"},
            {"pred", a.pred},
            {"gt", a.gt},
            {"thresholds", a.thresholds},
            {"canny_low", a.pdbe.canny_low},
            {"canny_high", a.pdbe.canny_high},
            {"blur_sigma", a.pdbe.blur_sigma},
            {"f1", e.f1},
            {"frames", e.frames},
            {"no_contour_frames", e.no_contour_frames},
            {"pdbe_frames", e.pdbe_frames},
            {"pdbe_skipped_frames", e.frames - e.pdbe_frames}};
  if (e.pdbe_frames) {
    j["pdbe_chamfer"] = e.pdbe_chamfer;
    j["pdbe_acc"] = e.pdbe_acc;
    j["pdbe_comp"] = e.pdbe_comp;
  } else {
    j["pdbe_chamfer"] = j["pdbe_acc"] = j["pdbe_comp"] = nullptr;
  }
  emit(j);
  return 0;
}

// ----------------------------------------------------------------------------------------
struct PoseArgs {
  std::string pred, gt;
  int delta = 1;
};

int run_eval_pose(const PoseArgs& a) {
  const auto pred = io::read_trajectory(a.pred), gt = io::read_trajectory(a.gt);
  const AteResult at = ate(pred, gt);
  const RpeResult rp = rpe(pred, gt, a.delta, at.alignment);
  emit({{"command", "eval-pose"},
        {"pred", a.pred},
        {"gt", a.gt},
        {"delta", a.delta},
        {"frames", gt.size()},
        {"ate", at.ate},
        {"rpe_t", rp.rpe_t},
        {"rpe_r_deg", rp.rpe_r},
        {"alignment", sim3_json(at.alignment)}});
  return 0;
}

// ----------------------------------------------------------------------------------------
struct ReconArgs {
  std::string pred, gt, pred_traj, gt_traj, align = "sim3";
  bool no_icp = false;
  eval::ReconConfig cfg;
};

int run_eval_recon(ReconArgs a) {
  a.cfg.align = eval::parse_recon_align(a.align);
  a.cfg.icp = !a.no_icp;
  const auto pred = io::read_gpm(a.pred), gt = io::read_gpm(a.gt);
  std::optional<Trajectory> pt, gtt;
  if (!a.pred_traj.empty()) pt = io::read_trajectory(a.pred_traj);
  if (!a.gt_traj.empty()) gtt = io::read_trajectory(a.gt_traj);
  if (pt.has_value() != gtt.has_value())
    throw Error(Errc::parse, "--pred-traj and --gt-traj must be given together");
  const auto e = eval::evaluate_recon(pred, gt, pt ? &*pt : nullptr, gtt ? &*gtt : nullptr, a.cfg);
  emit({{"command", "eval-recon"},
        {"pred", a.pred},
        {"gt", a.gt},
        {"pred_traj", a.pred_traj},
        {"gt_traj", a.gt_traj},
        {"align", eval::to_string(a.cfg.align)},
        {"icp", a.cfg.icp},
        {"icp_max_iterations", a.cfg.icp_cfg.max_iterations},
        {"icp_tol", a.cfg.icp_cfg.convergence_tol},
        {"icp_max_dist", a.cfg.icp_cfg.max_correspondence_dist},
        {"k_normals", a.cfg.k_normals},
        {"stride", a.cfg.stride},
        {"points", e.points},
        {"icp_iterations", e.icp_iterations},
        {"alignment", sim3_json(e.alignment)},
        {"acc", e.metrics.acc},
        {"comp", e.metrics.comp},
        {"nc", e.metrics.nc},
        {"mutual_pairs", e.metrics.mutual_pairs}});
  return 0;
}

// ----------------------------------------------------------------------------------------
struct LossArgs {
  std::string pred, gt, pred_traj, gt_traj, student, teacher, projection;
  std::optional<double> pred_scale;
  std::vector<int> scales = default_gradient_scales();
  LossConfig cfg;
};

int run_eval_loss(const LossArgs& a) {
  const auto pred = io::read_gpm(a.pred), gt = io::read_gpm(a.gt);
  std::optional<Trajectory> pt, gtt;
  if (!a.pred_traj.empty()) pt = io::read_trajectory(a.pred_traj);
  if (!a.gt_traj.empty()) gtt = io::read_trajectory(a.gt_traj);
  if (pt.has_value() != gtt.has_value())
    throw Error(Errc::parse, "--pred-traj and --gt-traj must be given together");
  const int distill_args = !a.student.empty() + !a.teacher.empty() + !a.projection.empty();
  if (distill_args != 0 && distill_args != 3)
    throw Error(Errc::parse, "--student, --teacher and --projection must be given together");
  std::optional<eval::DistillInputs> distill;
  if (distill_args == 3)
    distill = eval::DistillInputs{io::unpack_tokens(io::read_tensors(a.student)),
                                  io::unpack_tokens(io::read_tensors(a.teacher)),
                                  io::tensor(io::read_tensors(a.projection), "projection")};

  eval::LossInputs in{pred, gt, pt ? &*pt : nullptr, gtt ? &*gtt : nullptr, a.pred_scale,
                      distill ? &*distill : nullptr, a.scales};
  const auto e = eval::evaluate_losses(in, a.cfg);
  const auto& t = e.report.terms;
  const auto& c = a.cfg;
  json terms = {{"pointmap", t.pointmap}, {"normal", t.normal}, {"gradient", t.gradient}};
  terms["camera"] = e.has_camera ? json(t.camera) : json(nullptr);
  terms["scale"] = e.has_scale ? json(t.scale) : json(nullptr);
  terms["distill"] = e.has_distill ? json(t.distill) : json(nullptr);
  json j = {{"command", "eval-loss"},
            {"pred", a.pred},
            {"gt", a.gt},
            {"pred_traj", a.pred_traj},
            {"gt_traj", a.gt_traj},
            {"student", a.student},
            {"teacher", a.teacher},
            {"projection", a.projection},
            {"pred_scale", a.pred_scale ? json(*a.pred_scale) : json(nullptr)},
            {"gradient_scales", a.scales},
            {"weights",
             {{"pointmap", c.pointmap},
              {"camera", c.camera},
              {"translation", c.translation},
              {"rotation", c.rotation},
              {"scale", c.scale},
              {"normal", c.normal},
              {"gradient", c.gradient},
              {"distill", c.distill}}},
            {"terms", terms},
            {"total", e.report.total}};
  if (e.has_camera) j["camera_pairs"] = {{"rotation_mean", *e.rotation_mean}, {"translation_mean", *e.translation_mean}};
  emit(j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geomeval: synthetic scenes and geometry evaluation"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic scene (and optional corrupted prediction)");
  synth_cmd->add_option("--spec", synth_args.spec, "key=value scene spec")->required()->check(CLI::ExistingFile);
  synth_cmd->add_option("--out-dir", synth_args.out_dir, "output directory")->required();

  DenseArgs pm_args, depth_args;
  auto add_dense = [&](const char* name, const char* desc, DenseArgs& d) {
    auto* cmd = app.add_subcommand(name, desc);
    cmd->add_option("--pred", d.pred)->required()->check(CLI::ExistingFile);
    cmd->add_option("--gt", d.gt)->required()->check(CLI::ExistingFile);
    cmd->add_option("--align", d.align, "affine | scale | metric")
        ->check(CLI::IsMember({"affine", "scale", "metric"}))
        ->capture_default_str();
    cmd->add_option("--tau", d.tau, "inlier threshold")->capture_default_str();
    cmd->add_flag("--robust", d.robust, "L1 (IRLS) affine fit instead of least squares");
    return cmd;
  };
  auto* pm_cmd = add_dense("eval-pointmap", "Rel^p and delta^p after alignment", pm_args);
  auto* depth_cmd = add_dense("eval-depth", "Rel^d and delta^d after alignment", depth_args);

  BoundaryArgs b_args;
  auto* b_cmd = app.add_subcommand("eval-boundary", "Boundary F1 and PDBE");
  b_cmd->add_option("--pred", b_args.pred)->required()->check(CLI::ExistingFile);
  b_cmd->add_option("--gt", b_args.gt)->required()->check(CLI::ExistingFile);
  b_cmd->add_option("--thresholds", b_args.thresholds, "depth-ratio thresholds")->capture_default_str();
  b_cmd->add_option("--canny-low", b_args.pdbe.canny_low)->capture_default_str();
  b_cmd->add_option("--canny-high", b_args.pdbe.canny_high)->capture_default_str();
  b_cmd->add_option("--blur-sigma", b_args.pdbe.blur_sigma)->capture_default_str();

  PoseArgs pose_args;
  auto* pose_cmd = app.add_subcommand("eval-pose", "ATE and RPE");
  pose_cmd->add_option("--pred", pose_args.pred)->required()->check(CLI::ExistingFile);
  pose_cmd->add_option("--gt", pose_args.gt)->required()->check(CLI::ExistingFile);
  pose_cmd->add_option("--delta", pose_args.delta, "RPE frame interval")->check(CLI::PositiveNumber)->capture_default_str();

  ReconArgs r_args;
  auto* r_cmd = app.add_subcommand("eval-recon", "Accuracy, completeness and normal consistency");
  r_cmd->add_option("--pred", r_args.pred)->required()->check(CLI::ExistingFile);
  r_cmd->add_option("--gt", r_args.gt)->required()->check(CLI::ExistingFile);
  r_cmd->add_option("--pred-traj", r_args.pred_traj)->check(CLI::ExistingFile);
  r_cmd->add_option("--gt-traj", r_args.gt_traj)->check(CLI::ExistingFile);
  r_cmd->add_option("--align", r_args.align, "sim3 | se3 | none")
      ->check(CLI::IsMember({"sim3", "se3", "none"}))
      ->capture_default_str();
  r_cmd->add_flag("--no-icp", r_args.no_icp, "skip ICP refinement");
  r_cmd->add_option("--icp-iters", r_args.cfg.icp_cfg.max_iterations)->capture_default_str();
  r_cmd->add_option("--icp-tol", r_args.cfg.icp_cfg.convergence_tol)->capture_default_str();
  r_cmd->add_option("--icp-max-dist", r_args.cfg.icp_cfg.max_correspondence_dist)->capture_default_str();
  r_cmd->add_option("--k-normals", r_args.cfg.k_normals)->capture_default_str();
  r_cmd->add_option("--stride", r_args.cfg.stride, "pixel subsampling")->capture_default_str();

  LossArgs l_args;
  auto* l_cmd = app.add_subcommand("eval-loss", "Training losses and their weighted total");
  l_cmd->add_option("--pred", l_args.pred)->required()->check(CLI::ExistingFile);
  l_cmd->add_option("--gt", l_args.gt)->required()->check(CLI::ExistingFile);
  l_cmd->add_option("--pred-traj", l_args.pred_traj)->check(CLI::ExistingFile);
  l_cmd->add_option("--gt-traj", l_args.gt_traj)->check(CLI::ExistingFile);
  l_cmd->add_option("--pred-scale", l_args.pred_scale, "predicted metric scale");
  l_cmd->add_option("--student", l_args.student)->check(CLI::ExistingFile);
  l_cmd->add_option("--teacher", l_args.teacher)->check(CLI::ExistingFile);
  l_cmd->add_option("--projection", l_args.projection)->check(CLI::ExistingFile);
  l_cmd->add_option("--gradient-scales", l_args.scales)->capture_default_str();
  l_cmd->add_option("--lambda-pm", l_args.cfg.pointmap)->capture_default_str();
  l_cmd->add_option("--lambda-cam", l_args.cfg.camera)->capture_default_str();
  l_cmd->add_option("--lambda-trans", l_args.cfg.translation)->capture_default_str();
  l_cmd->add_option("--lambda-rot", l_args.cfg.rotation)->capture_default_str();
  l_cmd->add_option("--lambda-scale", l_args.cfg.scale)->capture_default_str();
  l_cmd->add_option("--lambda-normal", l_args.cfg.normal)->capture_default_str();
  l_cmd->add_option("--lambda-gradient", l_args.cfg.gradient)->capture_default_str();
  l_cmd->add_option("--lambda-distill", l_args.cfg.distill)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth_cmd) return run_synth(synth_args);
    if (*pm_cmd) return run_eval_pointmap(pm_args);
    if (*depth_cmd) return run_eval_depth(depth_args);
    if (*b_cmd) return run_eval_boundary(b_args);
    if (*pose_cmd) return run_eval_pose(pose_args);
    if (*r_cmd) return run_eval_recon(r_args);
    if (*l_cmd) return run_eval_loss(l_args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 5;
  }
  return 5;
}
