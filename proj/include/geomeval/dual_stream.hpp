#pragma once

#include <algorithm>
#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "geomeval/error.hpp"
#include "geomeval/rng.hpp"
#include "geomeval/tokens.hpp"

// Forward-only, double-precision replica of the dual-stream token path: a low-resolution
// stream of alternating frame-wise / global self-attention, and an adapter that fuses it
// into per-frame high-resolution tokens with cross-attention followed by self-attention.
// Single head, pre-norm blocks, rows are tokens (x·W convention).
namespace geomeval::toy {

using Positions = std::vector<Eigen::Vector2d>;

inline constexpr int kAlternationPairs = 2;
inline constexpr int kAdapterBlocks = 5;

struct RopeConfig {
  double base_frequency = 100.0;
  int l_max = 16;  // fixed maximum patch length the frequencies are tied to
  int head_dim = 32;

  void validate() const {
    if (head_dim <= 0 || head_dim % 2 != 0) throw Error(Errc::invalid_argument, "RoPE head_dim must be even");
    if (l_max < 1) throw Error(Errc::invalid_argument, "RoPE l_max must be >= 1");
    if (!(base_frequency > 1.0)) throw Error(Errc::invalid_argument, "RoPE base_frequency must be > 1");
  }
};

// ---------------------------------------------------------------------------
// Rotary encodings

/// Rotation angle of every channel pair for a token at `pos` (row, col).
///
/// Channels pair up as (2j, 2j+1). The first half of the pairs rotate with the row
/// coordinate, the rest with the column coordinate; within an axis group of n pairs,
/// local pair i has frequency base^(−i/n).
inline std::vector<double> rope_angles(const Eigen::Vector2d& pos, const RopeConfig& cfg) {
  const int pairs = cfg.head_dim / 2;
  const int row_pairs = pairs / 2;
  std::vector<double> out(static_cast<std::size_t>(pairs));
  for (int j = 0; j < pairs; ++j) {
    const bool row_axis = j < row_pairs;
    const int i = row_axis ? j : j - row_pairs;
    const int n = row_axis ? row_pairs : pairs - row_pairs;
    const double freq = std::pow(cfg.base_frequency, -static_cast<double>(i) / n);
    out[static_cast<std::size_t>(j)] = (row_axis ? pos.x() : pos.y()) * freq;
  }
  return out;
}

/// Applies axial RoPE at the given (possibly fractional) positions, one per token row.
inline Matrix rope_apply(const Matrix& tokens, std::span<const Eigen::Vector2d> positions, const RopeConfig& cfg) {
  cfg.validate();
  if (tokens.cols() != cfg.head_dim) throw Error(Errc::shape_mismatch, "RoPE: token width differs from head_dim");
  if (static_cast<std::size_t>(tokens.rows()) != positions.size())
    throw Error(Errc::shape_mismatch, "RoPE: one position per token required");
  Matrix out = tokens;
  for (Eigen::Index t = 0; t < tokens.rows(); ++t) {
    const auto angles = rope_angles(positions[static_cast<std::size_t>(t)], cfg);
    for (std::size_t j = 0; j < angles.size(); ++j) {
      const double c = std::cos(angles[j]), s = std::sin(angles[j]);
      const Eigen::Index a = static_cast<Eigen::Index>(2 * j), b = a + 1;
      const double x0 = tokens(t, a), x1 = tokens(t, b);
      out(t, a) = x0 * c - x1 * s;
      out(t, b) = x0 * s + x1 * c;
    }
  }
  return out;
}

/// Positions rescaled to the fixed context: m · l_max / l_cur.
inline Positions interp_positions(std::span<const Eigen::Vector2d> positions, int l_max, int l_cur) {
  if (l_cur < 1) throw Error(Errc::invalid_argument, "interp RoPE: l_cur must be >= 1");
  Positions out;
  out.reserve(positions.size());
  for (const auto& m : positions) out.emplace_back(m.x() * l_max / l_cur, m.y() * l_max / l_cur);
  return out;
}

/// RoPE with angular frequencies rescaled to the fixed maximum patch length, so a grid of
/// side l_cur spans the same positional range as one of side l_max.
inline Matrix interp_rope_apply(const Matrix& tokens, std::span<const Eigen::Vector2d> positions,
                                const RopeConfig& cfg, int l_cur) {
  cfg.validate();
  return rope_apply(tokens, interp_positions(positions, cfg.l_max, l_cur), cfg);
}

namespace detail {
// round((m + 0.5)·lr/hr − 0.5) in exact integer arithmetic, halves rounded up, then clamped.
inline int snap_axis(int m, int lr, int hr) {
  const long long num = (2LL * m + 1) * lr - hr;  // value = num / (2·hr)
  const long long den = 2LL * hr;
  const long long t = 2 * num + den;              // round(x) = floor((2num + den) / (2den))
  long long q = t / (2 * den);
  if (t % (2 * den) != 0 && t < 0) --q;
  return static_cast<int>(std::clamp<long long>(q, 0, lr - 1));
}
}  // namespace detail

/// Maps each high-resolution lattice position to its nearest low-resolution cell,
/// aligning cell centres per axis.
inline Positions snap_positions(std::span<const Eigen::Vector2d> hr_positions, int lr_h, int lr_w, int hr_h,
                                int hr_w) {
  if (lr_h < 1 || lr_w < 1 || hr_h < 1 || hr_w < 1) throw Error(Errc::invalid_argument, "snap: shapes must be >= 1");
  Positions out;
  out.reserve(hr_positions.size());
  for (const auto& m : hr_positions)
    out.emplace_back(detail::snap_axis(static_cast<int>(m.x()), lr_h, hr_h),
                     detail::snap_axis(static_cast<int>(m.y()), lr_w, hr_w));
  return out;
}

// ---------------------------------------------------------------------------
// Attention

/// Row-stochastic softmax(QKᵀ/√d) after RoPE on Q and K at their positions.
inline Matrix attention_weights(const Matrix& q, const Matrix& k, std::span<const Eigen::Vector2d> pos_q,
                                std::span<const Eigen::Vector2d> pos_k, const RopeConfig& cfg) {
  if (q.cols() != k.cols()) throw Error(Errc::shape_mismatch, "attention: query/key width mismatch");
  if (k.rows() == 0) throw Error(Errc::shape_mismatch, "attention: no keys");
  const Matrix qr = rope_apply(q, pos_q, cfg);
  const Matrix kr = rope_apply(k, pos_k, cfg);
  Matrix logits = (qr * kr.transpose()) / std::sqrt(static_cast<double>(q.cols()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) sum += logits(i, j) = std::exp(logits(i, j) - mx);
    logits.row(i) /= sum;
  }
  return logits;
}

inline Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, std::span<const Eigen::Vector2d> pos_q,
                        std::span<const Eigen::Vector2d> pos_k, const RopeConfig& cfg) {
  if (k.rows() != v.rows()) throw Error(Errc::shape_mismatch, "attention: key/value count mismatch");
  return attention_weights(q, k, pos_q, pos_k, cfg) * v;
}

// ---------------------------------------------------------------------------
// Weights

struct LayerNorm {
  RowVector gamma;
  RowVector beta;
  static constexpr double kEps = 1e-6;

  Matrix operator()(const Matrix& x) const {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double mean = x.row(i).mean();
      const RowVector centered = x.row(i).array() - mean;
      const double var = centered.squaredNorm() / static_cast<double>(x.cols());
      out.row(i) = (centered / std::sqrt(var + kEps)).cwiseProduct(gamma) + beta;
    }
    return out;
  }
};

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

struct Mlp {
  Matrix w1;
  RowVector b1;
  Matrix w2;
  RowVector b2;

  Matrix operator()(const Matrix& x) const {
    Matrix h = (x * w1).rowwise() + b1;
    h = h.unaryExpr([](double v) { return gelu(v); });
    return (h * w2).rowwise() + b2;
  }
};

/// Pre-norm self-attention block: x += Attn(LN₁x)·W_o; x += MLP(LN₂x).
struct AttentionWeights {
  LayerNorm norm1;
  Matrix wq, wk, wv, wo;
  LayerNorm norm2;
  Mlp mlp;
};

/// Adapter block: cross-attention (HR queries, LR keys/values), self-attention over the
/// fused tokens, then an MLP added residually to the incoming HR tokens. mlp.w2/b2 is the
/// final projection and is zero at initialisation.
struct AdapterWeights {
  LayerNorm norm_q, norm_kv;
  Matrix cross_q, cross_k, cross_v, cross_o;
  LayerNorm norm_self;
  Matrix self_q, self_k, self_v, self_o;
  LayerNorm norm_mlp;
  Mlp mlp;
};

struct AlternationPair {
  AttentionWeights frame;
  AttentionWeights global;
};

struct DualStreamWeights {
  RopeConfig rope;
  std::vector<AlternationPair> lr_stream;
  std::vector<AdapterWeights> adapter;
};

namespace detail {
inline Matrix random_matrix(Rng& rng, int rows, int cols, double sigma) {
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.normal(0.0, sigma);
  return m;
}
inline RowVector random_row(Rng& rng, int n, double mean, double sigma) {
  RowVector v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.normal(mean, sigma);
  return v;
}
inline LayerNorm random_norm(Rng& rng, int c) { return {random_row(rng, c, 1.0, 0.1), random_row(rng, c, 0.0, 0.1)}; }
inline Mlp random_mlp(Rng& rng, int c, int hidden) {
  return {random_matrix(rng, c, hidden, 1.0 / std::sqrt(c)), random_row(rng, hidden, 0.0, 0.1),
          random_matrix(rng, hidden, c, 1.0 / std::sqrt(hidden)), random_row(rng, c, 0.0, 0.1)};
}
}  // namespace detail

inline AttentionWeights random_attention_weights(Rng& rng, int channels, int hidden) {
  const double s = 1.0 / std::sqrt(channels);
  AttentionWeights w;
  w.norm1 = detail::random_norm(rng, channels);
  w.wq = detail::random_matrix(rng, channels, channels, s);
  w.wk = detail::random_matrix(rng, channels, channels, s);
  w.wv = detail::random_matrix(rng, channels, channels, s);
  w.wo = detail::random_matrix(rng, channels, channels, s);
  w.norm2 = detail::random_norm(rng, channels);
  w.mlp = detail::random_mlp(rng, channels, hidden);
  return w;
}

/// Random adapter weights; with zero_init the final MLP projection is all zeros.
inline AdapterWeights random_adapter_weights(Rng& rng, int channels, int hidden, bool zero_init) {
  const double s = 1.0 / std::sqrt(channels);
  AdapterWeights w;
  w.norm_q = detail::random_norm(rng, channels);
  w.norm_kv = detail::random_norm(rng, channels);
  w.cross_q = detail::random_matrix(rng, channels, channels, s);
  w.cross_k = detail::random_matrix(rng, channels, channels, s);
  w.cross_v = detail::random_matrix(rng, channels, channels, s);
  w.cross_o = detail::random_matrix(rng, channels, channels, s);
  w.norm_self = detail::random_norm(rng, channels);
  w.self_q = detail::random_matrix(rng, channels, channels, s);
  w.self_k = detail::random_matrix(rng, channels, channels, s);
  w.self_v = detail::random_matrix(rng, channels, channels, s);
  w.self_o = detail::random_matrix(rng, channels, channels, s);
  w.norm_mlp = detail::random_norm(rng, channels);
  w.mlp = detail::random_mlp(rng, channels, hidden);
  if (zero_init) {
    w.mlp.w2.setZero();
    w.mlp.b2.setZero();
  }
  return w;
}

/// Toy-sized weights: 2 frame/global pairs and 5 adapter blocks.
inline DualStreamWeights random_dual_stream_weights(std::uint64_t seed, const RopeConfig& rope, int hidden,
                                                    bool zero_init_adapter) {
  rope.validate();
  Rng rng(seed, 0xD5);
  DualStreamWeights w;
  w.rope = rope;
  for (int i = 0; i < kAlternationPairs; ++i) {
    AlternationPair p;
    p.frame = random_attention_weights(rng, rope.head_dim, hidden);
    p.global = random_attention_weights(rng, rope.head_dim, hidden);
    w.lr_stream.push_back(std::move(p));
  }
  for (int i = 0; i < kAdapterBlocks; ++i)
    w.adapter.push_back(random_adapter_weights(rng, rope.head_dim, hidden, zero_init_adapter));
  return w;
}

// ---------------------------------------------------------------------------
// Blocks

inline int side_length(const TokenGrid& x) { return std::max(x.height, x.width); }

inline void check_grid(const TokenGrid& x, const RopeConfig& cfg) {
  x.validate();
  if (x.channels != cfg.head_dim) throw Error(Errc::shape_mismatch, "token width differs from head_dim");
}

/// Self-attention within each frame independently, interpolated RoPE on the frame lattice.
inline TokenGrid frame_attention(const TokenGrid& x, const AttentionWeights& w, const RopeConfig& cfg) {
  check_grid(x, cfg);
  const Positions pos = interp_positions(x.positions(), cfg.l_max, side_length(x));
  TokenGrid out = x;
  for (auto& f : out.frames) {
    const Matrix h = w.norm1(f);
    f += attention(h * w.wq, h * w.wk, h * w.wv, pos, pos, cfg) * w.wo;
    f += w.mlp(w.norm2(f));
  }
  return out;
}

/// Self-attention over all frames' tokens jointly. Every frame uses the same spatial RoPE
/// lattice with no frame index, so the block is equivariant to frame permutations.
inline TokenGrid global_attention(const TokenGrid& x, const AttentionWeights& w, const RopeConfig& cfg) {
  check_grid(x, cfg);
  const int n = x.tokens_per_frame();
  const int frames = x.frame_count();
  const Positions pos = interp_positions(x.positions(), cfg.l_max, side_length(x));

  Matrix all(static_cast<Eigen::Index>(n) * frames, x.channels);
  Positions all_pos;
  all_pos.reserve(static_cast<std::size_t>(n) * frames);
  for (int f = 0; f < frames; ++f) {
    all.middleRows(static_cast<Eigen::Index>(f) * n, n) = x.frames[f];
    all_pos.insert(all_pos.end(), pos.begin(), pos.end());
  }
  const Matrix h = w.norm1(all);
  all += attention(h * w.wq, h * w.wk, h * w.wv, all_pos, all_pos, cfg) * w.wo;
  all += w.mlp(w.norm2(all));

  TokenGrid out = x;
  for (int f = 0; f < frames; ++f) out.frames[f] = all.middleRows(static_cast<Eigen::Index>(f) * n, n);
  return out;
}

/// [FrameAttn → GlobalAttn] pairs in sequence.
inline TokenGrid lr_stream_forward(const TokenGrid& x, std::span<const AlternationPair> pairs, const RopeConfig& cfg) {
  TokenGrid y = x;
  for (const auto& p : pairs) {
    y = frame_attention(y, p.frame, cfg);
    y = global_attention(y, p.global, cfg);
  }
  return y;
}

/// One adapter block. For frame i:
///   fuse = CrossAttn(Q = HR_i; K, V = LR_i)   queries carry the RoPE of their snapped LR cell
///   out  = HR_i + MLP(SelfAttn(fuse))         self-attention uses interpolated RoPE
inline TokenGrid adapter_block(const TokenGrid& f_hr, const TokenGrid& f_lr, const AdapterWeights& w,
                               const RopeConfig& cfg) {
  check_grid(f_hr, cfg);
  check_grid(f_lr, cfg);
  if (f_hr.frame_count() != f_lr.frame_count())
    throw Error(Errc::shape_mismatch, "adapter: HR and LR frame counts differ");

  const Positions hr_lattice = f_hr.positions();
  const Positions lr_lattice = f_lr.positions();
  const Positions snapped = snap_positions(hr_lattice, f_lr.height, f_lr.width, f_hr.height, f_hr.width);
  const Positions hr_interp = interp_positions(hr_lattice, cfg.l_max, side_length(f_hr));

  TokenGrid out = f_hr;
  for (int i = 0; i < f_hr.frame_count(); ++i) {
    const Matrix& hr = f_hr.frames[i];
    const Matrix hq = w.norm_q(hr);
    const Matrix kv = w.norm_kv(f_lr.frames[i]);
    const Matrix fuse =
        attention(hq * w.cross_q, kv * w.cross_k, kv * w.cross_v, snapped, lr_lattice, cfg) * w.cross_o;
    const Matrix hs = w.norm_self(fuse);
    const Matrix self =
        attention(hs * w.self_q, hs * w.self_k, hs * w.self_v, hr_interp, hr_interp, cfg) * w.self_o;
    out.frames[i] = hr + w.mlp(w.norm_mlp(self));
  }
  return out;
}

/// LR stream followed by the adapter stack; returns the fused HR tokens.
inline TokenGrid fuse_forward(const TokenGrid& lr, const TokenGrid& hr, const DualStreamWeights& w) {
  if (lr.frame_count() != hr.frame_count()) throw Error(Errc::shape_mismatch, "fuse: frame counts differ");
  const TokenGrid f_lr = lr_stream_forward(lr, w.lr_stream, w.rope);
  TokenGrid f = hr;
  for (const auto& block : w.adapter) f = adapter_block(f, f_lr, block, w.rope);
  return f;
}

/// Random tokens for tests and fixtures.
inline TokenGrid random_tokens(Rng& rng, int frames, int h, int w, int c) {
  TokenGrid g(frames, h, w, c);
  for (auto& f : g.frames)
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
  return g;
}

}  // namespace geomeval::toy
