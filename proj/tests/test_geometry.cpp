#include <gtest/gtest.h>

#include <numbers>

#include "geomeval/geometry.hpp"
#include "geomeval/rng.hpp"
#include "geomeval/synth.hpp"
#include "oracles.hpp"

using namespace geomeval;

namespace {

Mat3 random_matrix(Rng& rng) {
  Mat3 m;
  for (int i = 0; i < 9; ++i) m.data()[i] = rng.normal();
  return m;
}

bool is_rotation(const Mat3& r, double tol = 1e-9) {
  return (r.transpose() * r - Mat3::Identity()).norm() < tol && std::abs(r.determinant() - 1.0) < tol;
}

Pointmap plane_pointmap(int rows, int cols, double z) {
  Pointmap p(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) p(r, c) = Vec3((c - cols / 2.0) * 0.1, (r - rows / 2.0) * 0.1, z);
  return p;
}

}  // namespace

TEST(Rot9d, IdentityAndScaledIdentity) {
  EXPECT_TRUE(rot9d_to_rotation(Mat3::Identity()).isApprox(Mat3::Identity(), 1e-15));
  EXPECT_TRUE(rot9d_to_rotation(2.0 * Mat3::Identity()).isApprox(Mat3::Identity(), 1e-15));
}

TEST(Rot9d, NearestRotationBeatsRandomSamples) {
  Rng rng(11);
  int tested = 0;
  while (tested < 5) {
    const Mat3 m = random_matrix(rng);
    Eigen::JacobiSVD<Mat3> svd(m);
    const auto sv = svd.singularValues();
    if (sv[0] / sv[2] >= 10.0) continue;
    ++tested;
    const Mat3 r = rot9d_to_rotation(m);
    ASSERT_TRUE(is_rotation(r));
    Rng sampler = rng.split(static_cast<std::uint64_t>(tested));
    EXPECT_LE((r - m).norm(), oracle::best_random_rotation_distance(m, sampler, 10000) + 1e-12);
  }
}

TEST(Rot9d, IdempotentAndScaleInvariant) {
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    const Mat3 r = synth::random_rotation(rng);
    EXPECT_LT((rot9d_to_rotation(r) - r).cwiseAbs().maxCoeff(), 1e-12);
    const Mat3 m = random_matrix(rng);
    const double alpha = rng.uniform(0.01, 100.0);
    EXPECT_LT((rot9d_to_rotation(alpha * m) - rot9d_to_rotation(m)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE(is_rotation(rot9d_to_rotation(m)));
  }
}

TEST(Rot9d, ReflectionInputStillGivesProperRotation) {
  Mat3 m = Mat3::Identity();
  m(2, 2) = -1.0;
  const Mat3 r = rot9d_to_rotation(m);
  EXPECT_TRUE(is_rotation(r));
}

TEST(PoseAlgebra, InverseExamples) {
  const Pose id = Pose::identity();
  EXPECT_TRUE(pose_inverse(id).rotation.isApprox(Mat3::Identity()));
  EXPECT_EQ(pose_inverse(id).translation, Vec3::Zero());

  Pose t;
  t.translation = Vec3(1, -2, 3);
  EXPECT_EQ(pose_inverse(t).translation, Vec3(-1, 2, -3));
  EXPECT_EQ(pose_inverse(t).rotation, Mat3::Identity());

  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const Pose g = synth::random_pose(rng, 3.0);
    const Pose e = compose(g, pose_inverse(g));
    EXPECT_LT((e.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT(e.translation.cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(PoseAlgebra, RelativePose) {
  Rng rng(4);
  const Pose t = synth::random_pose(rng);
  const Pose same = relative_pose(t, t);
  EXPECT_LT((same.rotation - Mat3::Identity()).norm(), 1e-12);
  EXPECT_LT(same.translation.norm(), 1e-12);

  const Pose from_identity = relative_pose(Pose::identity(), t);
  EXPECT_LT((from_identity.rotation - t.rotation).norm(), 1e-15);
  EXPECT_LT((from_identity.translation - t.translation).norm(), 1e-15);

  for (int i = 0; i < 50; ++i) {
    const Pose gu = synth::random_pose(rng, 2.0), gv = synth::random_pose(rng, 2.0);
    const Pose back = compose(gu, relative_pose(gu, gv));
    EXPECT_LT((back.rotation - gv.rotation).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((back.translation - gv.translation).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Sim3Algebra, InverseAndTransformPose) {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const Sim3 s = synth::random_sim3(rng);
    const Sim3 e = compose(s, sim3_inverse(s));
    EXPECT_NEAR(e.scale, 1.0, 1e-12);
    EXPECT_LT((e.rotation - Mat3::Identity()).norm(), 1e-12);
    EXPECT_LT(e.translation.norm(), 1e-10);

    const Pose g = synth::random_pose(rng);
    const Pose moved = transform_pose(s, g);
    EXPECT_TRUE(is_rotation(moved.rotation));
    EXPECT_LT((moved.translation - s * g.translation).norm(), 1e-12);
  }
}

TEST(GeodesicAngle, Examples) {
  Rng rng(6);
  const Mat3 r = synth::random_rotation(rng);
  EXPECT_EQ(geodesic_angle(r, r), 0.0);
  EXPECT_NEAR(geodesic_angle(Mat3::Identity(), axis_angle(Vec3::UnitZ(), 0.3)), 0.3, 1e-15);
  EXPECT_NEAR(geodesic_angle(Mat3::Identity(), axis_angle(Vec3::UnitX(), std::numbers::pi)), std::numbers::pi, 1e-12);
}

TEST(GeodesicAngle, MatchesLogMapAndIsAMetric) {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const Mat3 a = synth::random_rotation(rng), b = synth::random_rotation(rng), c = synth::random_rotation(rng);
    const double ab = geodesic_angle(a, b);
    EXPECT_NEAR(ab, oracle::log_map_angle(a, b), 1e-9);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, std::numbers::pi);
    EXPECT_NEAR(ab, geodesic_angle(b, a), 1e-12);
    EXPECT_LE(geodesic_angle(a, c), ab + geodesic_angle(b, c) + 1e-9);
  }
}

TEST(GeodesicAngle, SmallAnglesKeepPrecision) {
  for (double theta : {1e-4, 1e-6, 1e-8}) {
    const Mat3 r = axis_angle(Vec3(1, 2, 3), theta);
    EXPECT_NEAR(geodesic_angle(Mat3::Identity(), r), theta, theta * 1e-6);
  }
}

TEST(SceneNorm, Examples) {
  Pointmap p(2, 2);
  p.mask = Mask(2, 2, 0);
  p(0, 0) = Vec3(0, 0, 2);
  p.mask(0, 0) = 1;
  std::vector<Pointmap> one{p};
  EXPECT_DOUBLE_EQ(scene_norm(one), 2.0);

  p(1, 1) = Vec3(0, 3, 0);
  p.mask(1, 1) = 1;
  p(0, 0) = Vec3(1, 0, 0);
  std::vector<Pointmap> two{p};
  EXPECT_DOUBLE_EQ(scene_norm(two), 2.0);

  p.mask = Mask(2, 2, 0);
  std::vector<Pointmap> none{p};
  EXPECT_THROW(scene_norm(none), Error);
}

TEST(SceneNorm, Homogeneous) {
  const auto data = synth::generate({.seed = 9, .n_frames = 2, .rows = 12, .cols = 10,
                                     .surface = synth::Surface::smooth_random,
                                     .trajectory = synth::TrajectoryModel::random_walk});
  const double base = scene_norm(data.pointmaps);
  EXPECT_NEAR(base, oracle::mean_norm(data.pointmaps), 1e-12);
  for (double alpha : {0.1, 3.0, 250.0}) {
    const auto scaled_maps = scaled(data.pointmaps, alpha);
    EXPECT_NEAR(scene_norm(scaled_maps), alpha * base, 1e-9 * alpha * base);
  }
}

TEST(Normals, FrontalPlaneFacesCamera) {
  const Pointmap p = plane_pointmap(6, 7, 5.0);
  const NormalMap n = pointmap_normals(p);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 7; ++c) {
      const bool interior = r + 1 < 6 && c + 1 < 7;
      ASSERT_EQ(n.mask(r, c) != 0, interior);
      if (interior) EXPECT_LT((n.normals(r, c) - Vec3(0, 0, -1)).norm(), 1e-12);
    }
}

TEST(Normals, TiltedPlane) {
  Pointmap p(5, 5);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) {
      const double x = 0.1 * c - 0.2, y = 0.1 * r - 0.2;
      p(r, c) = Vec3(x, y, 3.0 - x);  // x + z = 3
    }
  const NormalMap n = pointmap_normals(p);
  const Vec3 expected = Vec3(-1, 0, -1).normalized();
  for (int r = 0; r + 1 < 5; ++r)
    for (int c = 0; c + 1 < 5; ++c) EXPECT_LT((n.normals(r, c) - expected).norm(), 1e-12);
}

TEST(Normals, SpherePatchMatchesAnalyticNormals) {
  const synth::SceneSpec spec{.seed = 1, .n_frames = 1, .rows = 64, .cols = 64,
                              .surface = synth::Surface::sphere_patch};
  const auto data = synth::generate(spec);
  const NormalMap n = pointmap_normals(data.pointmaps[0]);
  const Vec3 center(0, 0, 3);
  double worst = 0.0;
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      if (!n.mask(r, c)) continue;
      const Vec3 p = data.pointmaps[0](r, c);
      const Vec3 analytic = (p - center).normalized();  // outward normal faces the camera at the origin
      worst = std::max(worst, std::acos(std::clamp(n.normals(r, c).dot(analytic), -1.0, 1.0)));
      EXPECT_NEAR(n.normals(r, c).norm(), 1.0, 1e-9);
    }
  EXPECT_LT(worst * 180.0 / std::numbers::pi, 2.0);
}

TEST(Normals, InvalidNeighbourMasksNormal) {
  Pointmap p = plane_pointmap(4, 4, 2.0);
  p.mask(1, 2) = 0;
  const NormalMap n = pointmap_normals(p);
  EXPECT_EQ(n.mask(1, 1), 0);  // right neighbour invalid
  EXPECT_EQ(n.mask(0, 2), 0);  // lower neighbour invalid
  EXPECT_EQ(n.mask(1, 2), 0);  // itself invalid
  EXPECT_EQ(n.mask(0, 0), 1);
}

TEST(InverseDepth, Examples) {
  const Pointmap p = plane_pointmap(3, 3, 2.0);
  const ScalarMap d = pointmap_to_inverse_depth(p, 1.0);
  for (double v : d.values.flat()) EXPECT_DOUBLE_EQ(v, 0.5);
  const ScalarMap one = pointmap_to_inverse_depth(p, 2.0);
  for (double v : one.values.flat()) EXPECT_DOUBLE_EQ(v, 1.0);

  Pointmap q = p;
  q(0, 0).z() = 0.0;
  q(0, 1).z() = -1.0;
  const ScalarMap dq = pointmap_to_inverse_depth(q, 1.0);
  EXPECT_EQ(dq.mask(0, 0), 0);
  EXPECT_EQ(dq.mask(0, 1), 0);
  EXPECT_THROW(pointmap_to_inverse_depth(p, 0.0), Error);
}

TEST(InverseDepth, InversionIdentity) {
  const auto data = synth::generate({.seed = 2, .n_frames = 2, .rows = 16, .cols = 16,
                                     .surface = synth::Surface::smooth_random,
                                     .trajectory = synth::TrajectoryModel::orbit, .metric_scale = 3.0});
  for (const auto& pm : data.pointmaps) {
    const ScalarMap d = pointmap_to_inverse_depth(pm, 1.7);
    for (int r = 0; r < pm.rows(); ++r)
      for (int c = 0; c < pm.cols(); ++c)
        if (d.valid(r, c)) EXPECT_NEAR(d.values(r, c) * pm(r, c).z(), 1.7, 1e-12);
  }
}

TEST(Validation, PointmapInvariants) {
  Pointmap p = plane_pointmap(3, 3, 1.0);
  EXPECT_NO_THROW(validate(p));
  p(1, 1).x() = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(validate(p), Error);
  p.mask(1, 1) = 0;
  EXPECT_NO_THROW(validate(p));
  EXPECT_THROW(validate(Pointmap(1, 5)), Error);
}

TEST(Validation, TrajectoryIndices) {
  Trajectory t = Trajectory::from_poses({Pose::identity(), Pose::identity()});
  EXPECT_NO_THROW(validate(t));
  t.frame_indices = {3, 3};
  EXPECT_THROW(validate(t), Error);
}
