#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "geomeval/dual_stream.hpp"
#include "oracles.hpp"

using namespace geomeval;
using namespace geomeval::toy;

namespace {

constexpr int kC = 32;
constexpr int kHidden = 64;

Matrix random_matrix(Rng& rng, int r, int c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

double max_abs(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

std::vector<Eigen::Vector2d> lattice(int h, int w) {
  std::vector<Eigen::Vector2d> out;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out.emplace_back(r, c);
  return out;
}

std::vector<Eigen::Vector2d> scaled_positions(const std::vector<Eigen::Vector2d>& p, double k) {
  std::vector<Eigen::Vector2d> out;
  for (const auto& m : p) out.push_back(m * k);
  return out;
}

// Pre-norm self-attention block written out with the oracle pieces.
Matrix block_oracle(const Matrix& x, const AttentionWeights& w, const std::vector<Eigen::Vector2d>& pos, double base) {
  const Matrix h = oracle::layer_norm(x, w.norm1.gamma, w.norm1.beta);
  Matrix y = x + oracle::naive_attention(h * w.wq, h * w.wk, h * w.wv, pos, pos, base) * w.wo;
  return y + oracle::mlp(oracle::layer_norm(y, w.norm2.gamma, w.norm2.beta), w.mlp.w1, w.mlp.b1, w.mlp.w2, w.mlp.b2);
}

TokenGrid permuted(const TokenGrid& x, const std::vector<int>& perm) {
  TokenGrid out = x;
  for (std::size_t i = 0; i < perm.size(); ++i) out.frames[i] = x.frames[static_cast<std::size_t>(perm[i])];
  return out;
}

}  // namespace

// ---------------------------------------------------------------- RoPE

TEST(Rope, OriginIsIdentityAndOddWidthRejected) {
  Rng rng(1);
  const RopeConfig cfg;
  const Matrix t = random_matrix(rng, 1, kC);
  const std::vector<Eigen::Vector2d> origin{Eigen::Vector2d::Zero()};
  EXPECT_EQ(rope_apply(t, origin, cfg), t);
  EXPECT_EQ(interp_rope_apply(t, origin, cfg, 3), t);
  RopeConfig odd;
  odd.head_dim = 5;
  EXPECT_THROW(rope_apply(random_matrix(rng, 1, 5), origin, odd), Error);
  EXPECT_THROW(interp_rope_apply(t, origin, cfg, 0), Error);
}

TEST(Rope, MatchesPerPairOracle) {
  Rng rng(2);
  const RopeConfig cfg;
  const auto pos = lattice(3, 5);
  const Matrix t = random_matrix(rng, 15, kC);
  const Matrix r = rope_apply(t, pos, cfg);
  for (int i = 0; i < 15; ++i)
    EXPECT_LT((r.row(i) - oracle::rope(t.row(i), pos[i].x(), pos[i].y(), cfg.base_frequency)).cwiseAbs().maxCoeff(),
              1e-12);
}

TEST(Rope, PreservesNormsAndRelativePosition) {
  Rng rng(3);
  const RopeConfig cfg;
  const Matrix q = random_matrix(rng, 1, kC), k = random_matrix(rng, 1, kC);
  auto dot_at = [&](Eigen::Vector2d a, Eigen::Vector2d b) {
    const std::vector<Eigen::Vector2d> pa{a}, pb{b};
    return rope_apply(q, pa, cfg).row(0).dot(rope_apply(k, pb, cfg).row(0));
  };
  EXPECT_NEAR(dot_at({1, 2}, {3, 5}), dot_at({4, 0}, {6, 3}), 1e-12);
  const std::vector<Eigen::Vector2d> p{{2.5, -1.0}};
  EXPECT_NEAR(rope_apply(q, p, cfg).norm(), q.norm(), 1e-12);
}

TEST(InterpRope, FullLengthEqualsStandard) {
  Rng rng(4);
  const RopeConfig cfg;
  const auto pos = lattice(4, 4);
  const Matrix t = random_matrix(rng, 16, kC);
  EXPECT_EQ(interp_rope_apply(t, pos, cfg, cfg.l_max), rope_apply(t, pos, cfg));
}

TEST(InterpRope, DoubledGridGivesIdenticalAngles) {
  const RopeConfig cfg;
  for (int l : {2, 4, 8})
    for (const Eigen::Vector2d m : {Eigen::Vector2d(1, 3), Eigen::Vector2d(0, 7), Eigen::Vector2d(5, 5)}) {
      const std::vector<Eigen::Vector2d> a{m}, b{2.0 * m};
      const auto ea = interp_positions(a, cfg.l_max, l);
      const auto eb = interp_positions(b, cfg.l_max, 2 * l);
      const auto aa = rope_angles(ea[0], cfg), ab = rope_angles(eb[0], cfg);
      for (std::size_t j = 0; j < aa.size(); ++j) EXPECT_NEAR(aa[j], ab[j], 1e-12);
    }
}

TEST(InterpRope, RelativeAngleIndependentOfResolution) {
  const RopeConfig cfg;
  const Eigen::Vector2d f1(0.25, 0.5), f2(0.75, 0.125);  // fractional positions
  std::vector<double> ref;
  for (int l : {4, 8, 16}) {
    const std::vector<Eigen::Vector2d> p{f1 * l, f2 * l};
    const auto e = interp_positions(p, cfg.l_max, l);
    const auto a1 = rope_angles(e[0], cfg), a2 = rope_angles(e[1], cfg);
    std::vector<double> rel(a1.size());
    for (std::size_t j = 0; j < a1.size(); ++j) rel[j] = a2[j] - a1[j];
    if (ref.empty()) ref = rel;
    for (std::size_t j = 0; j < rel.size(); ++j) EXPECT_NEAR(rel[j], ref[j], 1e-12);
  }
}

// ---------------------------------------------------------------- snapping

TEST(Snap, IdentityAndHalving) {
  const auto hr = lattice(5, 7);
  EXPECT_EQ(snap_positions(hr, 5, 7, 5, 7), hr);
  const auto s = snap_positions(lattice(4, 4), 2, 2, 4, 4);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const int r = static_cast<int>(i) / 4, c = static_cast<int>(i) % 4;
    EXPECT_EQ(s[i].x(), r / 2);
    EXPECT_EQ(s[i].y(), c / 2);
  }
  EXPECT_THROW(snap_positions(hr, 0, 2, 5, 7), Error);
}

TEST(Snap, RangeMonotoneAndNearestCentre) {
  for (auto [hh, hw, lh, lw] : {std::tuple{37, 23, 9, 6}, std::tuple{8, 8, 3, 5}, std::tuple{5, 4, 9, 7}}) {
    const auto s = snap_positions(lattice(hh, hw), lh, lw, hh, hw);
    for (int r = 0; r < hh; ++r)
      for (int c = 0; c < hw; ++c) {
        const auto& p = s[static_cast<std::size_t>(r * hw + c)];
        ASSERT_GE(p.x(), 0);
        ASSERT_LT(p.x(), lh);
        ASSERT_GE(p.y(), 0);
        ASSERT_LT(p.y(), lw);
        if (r > 0) EXPECT_GE(p.x(), s[static_cast<std::size_t>((r - 1) * hw + c)].x());
        if (c > 0) EXPECT_GE(p.y(), s[static_cast<std::size_t>(r * hw + c - 1)].y());
        // The chosen LR centre is a nearest one (ties allowed) to the HR centre.
        const double x = (r + 0.5) * lh / hh - 0.5;
        for (int k = 0; k < lh; ++k) EXPECT_LE(std::abs(p.x() - x), std::abs(k - x) + 1e-12);
      }
  }
}

// ---------------------------------------------------------------- attention

TEST(Attention, SingleKeyAndUniformKeys) {
  Rng rng(5);
  const RopeConfig cfg;
  const Matrix q = random_matrix(rng, 4, kC), k1 = random_matrix(rng, 1, kC), v1 = random_matrix(rng, 1, 6);
  const auto pq = lattice(2, 2);
  const std::vector<Eigen::Vector2d> pk1{{0, 0}};
  const Matrix out = attention(q, k1, v1, pq, pk1, cfg);
  for (int i = 0; i < 4; ++i) EXPECT_LT((out.row(i) - v1.row(0)).cwiseAbs().maxCoeff(), 1e-12);

  Matrix k(3, kC);
  k.rowwise() = k1.row(0);
  const Matrix v = random_matrix(rng, 3, 6);
  const std::vector<Eigen::Vector2d> pk(3, Eigen::Vector2d(1, 1));
  const Matrix u = attention(q, k, v, pq, pk, cfg);
  const Eigen::RowVectorXd mean = v.colwise().mean();
  for (int i = 0; i < 4; ++i) EXPECT_LT((u.row(i) - mean).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attention, ThreeTokenHandComputation) {
  RopeConfig cfg;
  cfg.head_dim = 4;
  cfg.base_frequency = 10.0;
  const Matrix x = (Matrix(3, 4) << 0.3, -1.2, 0.8, 0.1, 1.0, 0.4, -0.5, 0.9, -0.7, 0.2, 0.6, -0.3).finished();
  const Matrix v = (Matrix(3, 2) << 1.0, 2.0, -1.0, 0.5, 0.25, -3.0).finished();
  const std::vector<Eigen::Vector2d> pos{{0, 0}, {0, 1}, {1, 0}};
  // Head width 4: pair 0 turns by the row coordinate, pair 1 by the column (unit frequency each).
  double rot[3][4];
  for (int t = 0; t < 3; ++t) {
    const double ar = pos[t].x(), ac = pos[t].y();
    rot[t][0] = std::cos(ar) * x(t, 0) - std::sin(ar) * x(t, 1);
    rot[t][1] = std::sin(ar) * x(t, 0) + std::cos(ar) * x(t, 1);
    rot[t][2] = std::cos(ac) * x(t, 2) - std::sin(ac) * x(t, 3);
    rot[t][3] = std::sin(ac) * x(t, 2) + std::cos(ac) * x(t, 3);
  }
  Matrix expect(3, 2);
  for (int i = 0; i < 3; ++i) {
    double w[3], z = 0.0;
    for (int j = 0; j < 3; ++j) {
      const double dot = rot[i][0] * rot[j][0] + rot[i][1] * rot[j][1] + rot[i][2] * rot[j][2] + rot[i][3] * rot[j][3];
      w[j] = std::exp(dot / 2.0);
      z += w[j];
    }
    for (int c = 0; c < 2; ++c) expect(i, c) = (w[0] * v(0, c) + w[1] * v(1, c) + w[2] * v(2, c)) / z;
  }
  EXPECT_LT(max_abs(attention(x, x, v, pos, pos, cfg), expect), 1e-9);
}

TEST(Attention, RowsSumToOneAndMatchOracle) {
  Rng rng(6);
  const RopeConfig cfg;
  const Matrix q = random_matrix(rng, 9, kC) * 2.0, k = random_matrix(rng, 12, kC) * 2.0;
  const Matrix v = random_matrix(rng, 12, kC);
  const auto pq = lattice(3, 3), pk = lattice(3, 4);
  const Matrix w = attention_weights(q, k, pq, pk, cfg);
  for (int i = 0; i < w.rows(); ++i) EXPECT_NEAR(w.row(i).sum(), 1.0, 1e-12);
  EXPECT_LT(max_abs(attention(q, k, v, pq, pk, cfg), oracle::naive_attention(q, k, v, pq, pk, cfg.base_frequency)),
            1e-12);
  EXPECT_THROW(attention(q, k, random_matrix(rng, 11, kC), pq, pk, cfg), Error);
  EXPECT_THROW(attention(q, random_matrix(rng, 12, 8), v, pq, pk, cfg), Error);
}

// ---------------------------------------------------------------- frame / global blocks

TEST(FrameAttention, MatchesBlockOracleAndIsolatesFrames) {
  Rng rng(7);
  const RopeConfig cfg;
  const AttentionWeights w = random_attention_weights(rng, kC, kHidden);
  TokenGrid x = random_tokens(rng, 3, 3, 4, kC);
  const TokenGrid y = frame_attention(x, w, cfg);
  const auto pos = scaled_positions(lattice(3, 4), double(cfg.l_max) / 4.0);
  for (int f = 0; f < 3; ++f) EXPECT_LT(max_abs(y.frames[f], block_oracle(x.frames[f], w, pos, cfg.base_frequency)), 1e-9);

  x.frames[2] = random_matrix(rng, 12, kC);
  const TokenGrid z = frame_attention(x, w, cfg);
  EXPECT_EQ(z.frames[0], y.frames[0]);
  EXPECT_EQ(z.frames[1], y.frames[1]);

  TokenGrid twins = random_tokens(rng, 2, 3, 4, kC);
  twins.frames[1] = twins.frames[0];
  const TokenGrid t = frame_attention(twins, w, cfg);
  EXPECT_EQ(t.frames[0], t.frames[1]);
}

TEST(GlobalAttention, SingleFrameEqualsFrameAttention) {
  Rng rng(8);
  const RopeConfig cfg;
  const AttentionWeights w = random_attention_weights(rng, kC, kHidden);
  const TokenGrid x = random_tokens(rng, 1, 4, 4, kC);
  EXPECT_LT(max_abs(global_attention(x, w, cfg).frames[0], frame_attention(x, w, cfg).frames[0]), 1e-12);
}

TEST(GlobalAttention, MatchesFlattenedOracle) {
  Rng rng(9);
  const RopeConfig cfg;
  const AttentionWeights w = random_attention_weights(rng, kC, kHidden);
  const TokenGrid x = random_tokens(rng, 2, 2, 3, kC);
  Matrix all(12, kC);
  all << x.frames[0], x.frames[1];
  auto pos = scaled_positions(lattice(2, 3), double(cfg.l_max) / 3.0);
  auto pos2 = pos;
  pos2.insert(pos2.end(), pos.begin(), pos.end());
  const Matrix expect = block_oracle(all, w, pos2, cfg.base_frequency);
  const TokenGrid y = global_attention(x, w, cfg);
  EXPECT_LT(max_abs(y.frames[0], expect.topRows(6)), 1e-9);
  EXPECT_LT(max_abs(y.frames[1], expect.bottomRows(6)), 1e-9);
}

TEST(GlobalAttention, FramePermutationEquivariant) {
  Rng rng(10);
  const RopeConfig cfg;
  const AttentionWeights w = random_attention_weights(rng, kC, kHidden);
  const TokenGrid x = random_tokens(rng, 4, 3, 3, kC);
  const std::vector<int> perm{2, 0, 3, 1};
  const TokenGrid a = global_attention(permuted(x, perm), w, cfg);
  const TokenGrid b = permuted(global_attention(x, w, cfg), perm);
  for (int f = 0; f < 4; ++f) EXPECT_LT(max_abs(a.frames[f], b.frames[f]), 1e-12);
}

TEST(LrStream, ComposesBlocksDeterministically) {
  const RopeConfig cfg;
  const DualStreamWeights w = random_dual_stream_weights(11, cfg, kHidden, true);
  Rng rng(11);
  const TokenGrid x = random_tokens(rng, 3, 4, 4, kC);
  TokenGrid manual = x;
  for (const auto& p : w.lr_stream) manual = global_attention(frame_attention(manual, p.frame, cfg), p.global, cfg);
  const TokenGrid y = lr_stream_forward(x, w.lr_stream, cfg);
  const TokenGrid y2 = lr_stream_forward(x, w.lr_stream, cfg);
  for (int f = 0; f < 3; ++f) {
    EXPECT_EQ(y.frames[f], manual.frames[f]);
    EXPECT_EQ(y.frames[f], y2.frames[f]);
  }
}

TEST(LrStream, ZeroedBranchesAreIdentity) {
  const RopeConfig cfg;
  DualStreamWeights w = random_dual_stream_weights(12, cfg, kHidden, true);
  for (auto& p : w.lr_stream)
    for (AttentionWeights* a : {&p.frame, &p.global}) {
      a->wo.setZero();
      a->mlp.w2.setZero();
      a->mlp.b2.setZero();
    }
  Rng rng(12);
  const TokenGrid x = random_tokens(rng, 1, 3, 3, kC);
  EXPECT_EQ(lr_stream_forward(x, w.lr_stream, cfg).frames[0], x.frames[0]);
}

// ---------------------------------------------------------------- adapter / fusion

TEST(Adapter, ZeroInitIsExactIdentity) {
  const RopeConfig cfg;
  const DualStreamWeights w = random_dual_stream_weights(13, cfg, kHidden, true);
  Rng rng(13);
  const TokenGrid lr = random_tokens(rng, 3, 4, 4, kC), hr = random_tokens(rng, 3, 8, 6, kC);
  const TokenGrid one = adapter_block(hr, lr, w.adapter[0], cfg);
  const TokenGrid fused = fuse_forward(lr, hr, w);
  for (int f = 0; f < 3; ++f) {
    EXPECT_EQ(one.frames[f], hr.frames[f]);
    EXPECT_EQ(fused.frames[f], hr.frames[f]);
  }
}

TEST(Adapter, MatchesStepByStepExpansion) {
  const RopeConfig cfg;
  Rng rng(14);
  const AdapterWeights w = random_adapter_weights(rng, kC, kHidden, false);
  const TokenGrid lr = random_tokens(rng, 2, 3, 3, kC), hr = random_tokens(rng, 2, 3, 3, kC);
  const TokenGrid lr2 = random_tokens(rng, 2, 2, 2, kC);
  const double base = cfg.base_frequency;
  for (const TokenGrid* low : {&lr, &lr2}) {
    const TokenGrid out = adapter_block(hr, *low, w, cfg);
    // Snapped query positions by the centre-alignment formula, in floating point.
    std::vector<Eigen::Vector2d> snapped;
    for (const auto& m : lattice(3, 3)) {
      auto snap = [](double v, int lo, int hi) {
        return std::clamp(std::floor((v + 0.5) * lo / hi - 0.5 + 0.5), 0.0, double(lo - 1));
      };
      snapped.emplace_back(snap(m.x(), low->height, 3), snap(m.y(), low->width, 3));
    }
    const auto lr_pos = lattice(low->height, low->width);
    const auto hr_pos = scaled_positions(lattice(3, 3), double(cfg.l_max) / 3.0);
    for (int i = 0; i < 2; ++i) {
      const Matrix hq = oracle::layer_norm(hr.frames[i], w.norm_q.gamma, w.norm_q.beta);
      const Matrix kv = oracle::layer_norm(low->frames[i], w.norm_kv.gamma, w.norm_kv.beta);
      const Matrix fuse =
          oracle::naive_attention(hq * w.cross_q, kv * w.cross_k, kv * w.cross_v, snapped, lr_pos, base) * w.cross_o;
      const Matrix hs = oracle::layer_norm(fuse, w.norm_self.gamma, w.norm_self.beta);
      const Matrix self =
          oracle::naive_attention(hs * w.self_q, hs * w.self_k, hs * w.self_v, hr_pos, hr_pos, base) * w.self_o;
      const Matrix expect = hr.frames[i] + oracle::mlp(oracle::layer_norm(self, w.norm_mlp.gamma, w.norm_mlp.beta),
                                                       w.mlp.w1, w.mlp.b1, w.mlp.w2, w.mlp.b2);
      EXPECT_LT(max_abs(out.frames[i], expect), 1e-9);
    }
  }
}

TEST(Adapter, CoincidentGridsUseStandardRope) {
  const RopeConfig cfg;
  Rng rng(15);
  const auto pos = lattice(4, 4);
  const auto snapped = snap_positions(pos, 4, 4, 4, 4);
  const Matrix q = random_matrix(rng, 16, kC), k = random_matrix(rng, 16, kC), v = random_matrix(rng, 16, kC);
  EXPECT_EQ(attention(q, k, v, snapped, pos, cfg), attention(q, k, v, pos, pos, cfg));
}

TEST(Adapter, PairsFramesAndRejectsMismatch) {
  const RopeConfig cfg;
  Rng rng(16);
  const AdapterWeights w = random_adapter_weights(rng, kC, kHidden, false);
  TokenGrid lr = random_tokens(rng, 2, 3, 3, kC);
  const TokenGrid hr = random_tokens(rng, 2, 6, 6, kC);
  const TokenGrid a = adapter_block(hr, lr, w, cfg);
  lr.frames[1] = random_matrix(rng, 9, kC);
  const TokenGrid b = adapter_block(hr, lr, w, cfg);
  EXPECT_EQ(a.frames[0], b.frames[0]);
  EXPECT_GT(max_abs(a.frames[1], b.frames[1]), 0.0);
  EXPECT_THROW(adapter_block(hr, random_tokens(rng, 3, 3, 3, kC), w, cfg), Error);
}

TEST(Fuse, FramePermutationEquivariant) {
  const RopeConfig cfg;
  const DualStreamWeights w = random_dual_stream_weights(17, cfg, kHidden, false);
  Rng rng(17);
  for (int n : {2, 4, 6}) {
    const TokenGrid lr = random_tokens(rng, n, 4, 4, kC), hr = random_tokens(rng, n, 8, 8, kC);
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
    const TokenGrid a = fuse_forward(permuted(lr, perm), permuted(hr, perm), w);
    const TokenGrid b = permuted(fuse_forward(lr, hr, w), perm);
    double dev = 0.0;
    for (int f = 0; f < n; ++f) dev = std::max(dev, max_abs(a.frames[f], b.frames[f]));
    EXPECT_LT(dev, 1e-5) << "n=" << n;
  }
}

TEST(Fuse, SingleFrameMatchesPerFramePath) {
  const RopeConfig cfg;
  const DualStreamWeights w = random_dual_stream_weights(18, cfg, kHidden, false);
  Rng rng(18);
  const TokenGrid lr = random_tokens(rng, 1, 4, 4, kC), hr = random_tokens(rng, 1, 6, 6, kC);
  TokenGrid f_lr = lr;
  for (const auto& p : w.lr_stream) f_lr = global_attention(frame_attention(f_lr, p.frame, cfg), p.global, cfg);
  TokenGrid f = hr;
  for (const auto& b : w.adapter) f = adapter_block(f, f_lr, b, cfg);
  EXPECT_EQ(fuse_forward(lr, hr, w).frames[0], f.frames[0]);
  EXPECT_THROW(fuse_forward(lr, random_tokens(rng, 2, 6, 6, kC), w), Error);
}
