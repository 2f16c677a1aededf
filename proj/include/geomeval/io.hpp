#pragma once

#include <Eigen/Geometry>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "geomeval/dual_stream.hpp"
#include "geomeval/error.hpp"
#include "geomeval/geometry.hpp"
#include "geomeval/grid.hpp"
#include "geomeval/synth.hpp"
#include "geomeval/tokens.hpp"

namespace geomeval::io {

using Bytes = std::vector<unsigned char>;

namespace detail {

template <class U>
void put_le(Bytes& b, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(const Bytes& b, std::string what) : b_(b), what_(std::move(what)) {}

  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  unsigned char byte() {
    need(1);
    return b_[pos_++];
  }
  std::size_t remaining() const { return b_.size() - pos_; }
  [[noreturn]] void fail(const std::string& msg) const { throw Error(Errc::parse, what_ + ": " + msg); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) fail("truncated file");
  }
  const Bytes& b_;
  std::size_t pos_ = 0;
  std::string what_;
};

}  // namespace detail

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  Bytes b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return b;
}

inline std::string read_text(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  return {b.begin(), b.end()};
}

/// Writes to a sibling temporary file, then renames over the target.
inline void atomic_write(const std::filesystem::path& path, std::span<const unsigned char> data) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error(Errc::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(Errc::io, "cannot rename " + tmp.string() + ": " + ec.message());
}

inline void atomic_write(const std::filesystem::path& path, std::string_view text) {
  atomic_write(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------------------------
// GPM / GDM: 20-byte header (magic, u16 version, u32 N, H, W, u16 flags), float32 payload,
// optional byte mask. Everything little-endian.

inline constexpr std::uint16_t kGridFormatVersion = 1;
inline constexpr std::uint16_t kFlagMask = 1;

namespace detail {

inline void put_header(Bytes& b, const char* magic, std::size_t n, int h, int w, bool mask) {
  b.insert(b.end(), magic, magic + 4);
  put_le<std::uint16_t>(b, kGridFormatVersion);
  put_le<std::uint32_t>(b, static_cast<std::uint32_t>(n));
  put_le<std::uint32_t>(b, static_cast<std::uint32_t>(h));
  put_le<std::uint32_t>(b, static_cast<std::uint32_t>(w));
  put_le<std::uint16_t>(b, mask ? kFlagMask : 0);
}

struct GridHeader {
  std::uint32_t n, h, w;
  bool mask;
};

inline GridHeader get_header(Reader& r, const char* magic, int channels) {
  if (r.str(4) != std::string_view(magic, 4)) r.fail(std::string("bad magic, expected ") + magic);
  if (r.le<std::uint16_t>() != kGridFormatVersion) r.fail("unsupported version");
  GridHeader h{};
  h.n = r.le<std::uint32_t>();
  h.h = r.le<std::uint32_t>();
  h.w = r.le<std::uint32_t>();
  const std::uint16_t flags = r.le<std::uint16_t>();
  if (flags & ~kFlagMask) r.fail("unknown flags");
  h.mask = flags & kFlagMask;
  const std::uint64_t cells = std::uint64_t{h.n} * h.h * h.w;
  const std::uint64_t expected = cells * 4 * channels + (h.mask ? cells : 0);
  if (r.remaining() != expected) r.fail("payload length does not match header");
  return h;
}

template <class Map>
bool any_invalid(std::span<const Map> maps) {
  for (const auto& m : maps)
    for (auto v : m.mask.flat())
      if (!v) return true;
  return false;
}

template <class Map>
void check_uniform(std::span<const Map> maps) {
  for (const auto& m : maps)
    if (m.rows() != maps.front().rows() || m.cols() != maps.front().cols())
      throw Error(Errc::shape_mismatch, "all frames in a file must share one resolution");
}

}  // namespace detail

/// Values are stored as float32: Read(Write(x)) == x for float-representable inputs.
/// The mask section is written only when some pixel is invalid.
inline Bytes encode_gpm(std::span<const Pointmap> maps) {
  Bytes b;
  const int h = maps.empty() ? 0 : maps.front().rows(), w = maps.empty() ? 0 : maps.front().cols();
  detail::check_uniform(maps);
  const bool mask = detail::any_invalid(maps);
  detail::put_header(b, "GPM1", maps.size(), h, w, mask);
  for (const auto& m : maps)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        if (m.valid(r, c) && !m(r, c).allFinite()) throw Error(Errc::invalid_argument, "non-finite valid point");
        for (int k = 0; k < 3; ++k) detail::put_le(b, std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c)[k])));
      }
  if (mask)
    for (const auto& m : maps)
      for (auto v : m.mask.flat()) b.push_back(v ? 1 : 0);
  return b;
}

inline std::vector<Pointmap> decode_gpm(const Bytes& bytes, const std::string& what = "gpm") {
  detail::Reader r(bytes, what);
  const auto h = detail::get_header(r, "GPM1", 3);
  std::vector<Pointmap> maps;
  for (std::uint32_t f = 0; f < h.n; ++f) {
    Pointmap m(static_cast<int>(h.h), static_cast<int>(h.w), static_cast<int>(f));
    for (auto& p : m.points.flat())
      for (int k = 0; k < 3; ++k) p[k] = r.f32();
    maps.push_back(std::move(m));
  }
  if (h.mask)
    for (auto& m : maps)
      for (auto& v : m.mask.flat()) {
        v = r.byte();
        if (v > 1) r.fail("mask bytes must be 0 or 1");
      }
  for (const auto& m : maps)
    for (int rr = 0; rr < m.rows(); ++rr)
      for (int c = 0; c < m.cols(); ++c)
        if (m.valid(rr, c) && m(rr, c).hasNaN()) r.fail("NaN at a valid pixel");
  return maps;
}

inline Bytes encode_gdm(std::span<const ScalarMap> maps) {
  Bytes b;
  const int h = maps.empty() ? 0 : maps.front().rows(), w = maps.empty() ? 0 : maps.front().cols();
  detail::check_uniform(maps);
  const bool mask = detail::any_invalid(maps);
  detail::put_header(b, "GDM1", maps.size(), h, w, mask);
  for (const auto& m : maps)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        if (m.valid(r, c) && !std::isfinite(m.values(r, c)))
          throw Error(Errc::invalid_argument, "non-finite valid depth");
        detail::put_le(b, std::bit_cast<std::uint32_t>(static_cast<float>(m.values(r, c))));
      }
  if (mask)
    for (const auto& m : maps)
      for (auto v : m.mask.flat()) b.push_back(v ? 1 : 0);
  return b;
}

inline std::vector<ScalarMap> decode_gdm(const Bytes& bytes, const std::string& what = "gdm") {
  detail::Reader r(bytes, what);
  const auto h = detail::get_header(r, "GDM1", 1);
  std::vector<ScalarMap> maps;
  for (std::uint32_t f = 0; f < h.n; ++f) {
    ScalarMap m(static_cast<int>(h.h), static_cast<int>(h.w));
    for (auto& v : m.values.flat()) v = r.f32();
    maps.push_back(std::move(m));
  }
  if (h.mask)
    for (auto& m : maps)
      for (auto& v : m.mask.flat()) {
        v = r.byte();
        if (v > 1) r.fail("mask bytes must be 0 or 1");
      }
  for (const auto& m : maps)
    for (int rr = 0; rr < m.rows(); ++rr)
      for (int c = 0; c < m.cols(); ++c)
        if (m.valid(rr, c) && std::isnan(m.values(rr, c))) r.fail("NaN at a valid pixel");
  return maps;
}

inline void write_gpm(const std::filesystem::path& p, std::span<const Pointmap> maps) { atomic_write(p, encode_gpm(maps)); }
inline std::vector<Pointmap> read_gpm(const std::filesystem::path& p) { return decode_gpm(read_file(p), p.string()); }
inline void write_gdm(const std::filesystem::path& p, std::span<const ScalarMap> maps) { atomic_write(p, encode_gdm(maps)); }
inline std::vector<ScalarMap> read_gdm(const std::filesystem::path& p) { return decode_gdm(read_file(p), p.string()); }

// ---------------------------------------------------------------------------------------------
// Trajectory text: "index tx ty tz qx qy qz qw", '#' comments.

struct TrajectoryRecord {
  int index = 0;
  Vec3 t = Vec3::Zero();
  Eigen::Vector4d q{0.0, 0.0, 0.0, 1.0};  // x, y, z, w

  bool operator==(const TrajectoryRecord&) const = default;
};

inline constexpr double kQuaternionNormTol = 1e-6;

inline std::vector<TrajectoryRecord> parse_trajectory(std::string_view text, const std::string& what = "trajectory") {
  std::vector<TrajectoryRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw Error(Errc::parse, what + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    TrajectoryRecord rec;
    ls >> rec.index >> rec.t.x() >> rec.t.y() >> rec.t.z() >> rec.q[0] >> rec.q[1] >> rec.q[2] >> rec.q[3];
    if (!ls) fail("expected 'index tx ty tz qx qy qz qw'");
    std::string extra;
    if (ls >> extra) fail("trailing tokens");
    if (!rec.t.allFinite() || !rec.q.allFinite()) fail("non-finite value");
    if (std::abs(rec.q.norm() - 1.0) > kQuaternionNormTol) fail("quaternion is not unit norm");
    if (!out.empty() && rec.index <= out.back().index) fail("indices must be strictly increasing");
    out.push_back(rec);
  }
  return out;
}

inline std::string format_trajectory(std::span<const TrajectoryRecord> records) {
  std::string s = "# index tx ty tz qx qy qz qw\n";
  char buf[512];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%d %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", r.index, r.t.x(), r.t.y(),
                  r.t.z(), r.q[0], r.q[1], r.q[2], r.q[3]);
    s += buf;
  }
  return s;
}

inline Trajectory to_trajectory(std::span<const TrajectoryRecord> records) {
  Trajectory t;
  for (const auto& r : records) {
    const Eigen::Quaterniond q(r.q[3], r.q[0], r.q[1], r.q[2]);
    t.poses.push_back({q.normalized().toRotationMatrix(), r.t});
    t.frame_indices.push_back(r.index);
  }
  return t;
}

inline std::vector<TrajectoryRecord> to_records(const Trajectory& t) {
  validate(t);
  std::vector<TrajectoryRecord> out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    Eigen::Quaterniond q(t.poses[i].rotation);
    q.normalize();
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    out.push_back({t.frame_indices[i], t.poses[i].translation, {q.x(), q.y(), q.z(), q.w()}});
  }
  return out;
}

inline void write_trajectory(const std::filesystem::path& p, const Trajectory& t) {
  atomic_write(p, format_trajectory(to_records(t)));
}
inline Trajectory read_trajectory(const std::filesystem::path& p) {
  return to_trajectory(parse_trajectory(read_text(p), p.string()));
}

// ---------------------------------------------------------------------------------------------
// Key=value scene spec. Blank lines and '#' comments are ignored.

struct SynthJob {
  synth::SceneSpec scene;
  std::optional<synth::Corruption> corruption;  // set when any corruption key is present
  std::uint64_t corruption_seed = 0;
};

inline std::map<std::string, std::string> parse_key_values(std::string_view text, const std::string& what) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(Errc::parse, what + ":" + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty() || kv.contains(key))
      throw Error(Errc::parse, what + ":" + std::to_string(line_no) + ": empty or duplicate key '" + key + "'");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(x)) throw Error(Errc::parse, "bad number for '" + key + "': " + v);
  return x;
}

inline long long to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw Error(Errc::parse, "bad integer for '" + key + "': " + v);
  return x;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw Error(Errc::parse, "bad unsigned integer for '" + key + "': " + v);
  return x;
}

inline Vec3 to_vec3(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  std::string a, b, c, extra;
  if (!(in >> a >> b >> c) || (in >> extra)) throw Error(Errc::parse, "expected three numbers for '" + key + "'");
  return {to_double(key, a), to_double(key, b), to_double(key, c)};
}

}  // namespace detail

/// Keys: seed, n_frames, resolution (HxW) or height/width, surface, trajectory, metric_scale.
/// Optional corruption keys: noise_sigma, outlier_fraction, outlier_magnitude,
/// gauge_scale, gauge_rotation (axis-angle, radians), gauge_translation,
/// jitter_rotation_deg, jitter_translation, corruption_seed.
inline SynthJob parse_synth_spec(std::string_view text, const std::string& what = "spec") {
  auto kv = parse_key_values(text, what);
  SynthJob job;
  auto& s = job.scene;
  auto take = [&](const char* key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  if (auto v = take("seed")) s.seed = detail::to_u64("seed", *v);
  if (auto v = take("n_frames")) s.n_frames = static_cast<int>(detail::to_int("n_frames", *v));
  if (auto v = take("resolution")) {
    const auto x = v->find_first_of("xX");
    if (x == std::string::npos) throw Error(Errc::parse, "resolution must be HxW");
    s.rows = static_cast<int>(detail::to_int("resolution", v->substr(0, x)));
    s.cols = static_cast<int>(detail::to_int("resolution", v->substr(x + 1)));
  }
  if (auto v = take("height")) s.rows = static_cast<int>(detail::to_int("height", *v));
  if (auto v = take("width")) s.cols = static_cast<int>(detail::to_int("width", *v));
  if (auto v = take("surface")) s.surface = synth::parse_surface(*v);
  if (auto v = take("trajectory")) s.trajectory = synth::parse_trajectory_model(*v);
  if (auto v = take("metric_scale")) s.metric_scale = detail::to_double("metric_scale", *v);

  synth::Corruption c;
  bool any = false;
  if (auto v = take("noise_sigma")) c.gaussian_sigma = detail::to_double("noise_sigma", *v), any = true;
  if (auto v = take("outlier_fraction")) c.outlier_fraction = detail::to_double("outlier_fraction", *v), any = true;
  if (auto v = take("outlier_magnitude")) c.outlier_magnitude = detail::to_double("outlier_magnitude", *v), any = true;
  std::optional<Sim3> gauge;
  auto gauge_ref = [&]() -> Sim3& { return gauge ? *gauge : gauge.emplace(); };
  if (auto v = take("gauge_scale")) gauge_ref().scale = detail::to_double("gauge_scale", *v);
  if (auto v = take("gauge_rotation")) gauge_ref().rotation = so3_exp(detail::to_vec3("gauge_rotation", *v));
  if (auto v = take("gauge_translation")) gauge_ref().translation = detail::to_vec3("gauge_translation", *v);
  if (gauge) c.global_sim3 = gauge, any = true;
  std::optional<synth::FrameJitter> jitter;
  auto jitter_ref = [&]() -> synth::FrameJitter& { return jitter ? *jitter : jitter.emplace(); };
  if (auto v = take("jitter_rotation_deg"))
    jitter_ref().rotation_rad = detail::to_double("jitter_rotation_deg", *v) * std::numbers::pi / 180.0;
  if (auto v = take("jitter_translation")) jitter_ref().translation = detail::to_double("jitter_translation", *v);
  if (jitter) c.per_frame_jitter = jitter, any = true;
  if (auto v = take("corruption_seed")) job.corruption_seed = detail::to_u64("corruption_seed", *v);
  else job.corruption_seed = s.seed + 1;

  if (!kv.empty()) throw Error(Errc::parse, what + ": unknown key '" + kv.begin()->first + "'");
  try {
    s.validate();
    c.validate();
  } catch (const Error& e) {
    throw Error(Errc::parse, what + ": " + e.what());
  }
  if (any) job.corruption = c;
  return job;
}

// ---------------------------------------------------------------------------------------------
// GTN1 named-tensor archive: magic, u16 version, u32 count, then per tensor
// u16 name length, name bytes, u32 rows, u32 cols, float64 row-major payload.

using TensorArchive = std::map<std::string, Matrix>;

inline Bytes encode_tensors(const TensorArchive& a) {
  Bytes b{'G', 'T', 'N', '1'};
  detail::put_le<std::uint16_t>(b, 1);
  detail::put_le<std::uint32_t>(b, static_cast<std::uint32_t>(a.size()));
  for (const auto& [name, m] : a) {
    detail::put_le<std::uint16_t>(b, static_cast<std::uint16_t>(name.size()));
    b.insert(b.end(), name.begin(), name.end());
    detail::put_le<std::uint32_t>(b, static_cast<std::uint32_t>(m.rows()));
    detail::put_le<std::uint32_t>(b, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) detail::put_le(b, std::bit_cast<std::uint64_t>(m(r, c)));
  }
  return b;
}

inline TensorArchive decode_tensors(const Bytes& bytes, const std::string& what = "tensors") {
  detail::Reader r(bytes, what);
  if (r.str(4) != "GTN1") r.fail("bad magic, expected GTN1");
  if (r.le<std::uint16_t>() != 1) r.fail("unsupported version");
  const auto n = r.le<std::uint32_t>();
  TensorArchive a;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.str(r.le<std::uint16_t>());
    const auto rows = r.le<std::uint32_t>();
    const auto cols = r.le<std::uint32_t>();
    if (std::uint64_t{rows} * cols * 8 > r.remaining()) r.fail("tensor '" + name + "' truncated");
    Matrix m(rows, cols);
    for (std::uint32_t rr = 0; rr < rows; ++rr)
      for (std::uint32_t c = 0; c < cols; ++c) m(rr, c) = r.f64();
    if (!a.emplace(name, std::move(m)).second) r.fail("duplicate tensor '" + name + "'");
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  return a;
}

inline void write_tensors(const std::filesystem::path& p, const TensorArchive& a) { atomic_write(p, encode_tensors(a)); }
inline TensorArchive read_tensors(const std::filesystem::path& p) { return decode_tensors(read_file(p), p.string()); }

inline const Matrix& tensor(const TensorArchive& a, const std::string& name) {
  auto it = a.find(name);
  if (it == a.end()) throw Error(Errc::parse, "missing tensor '" + name + "'");
  return it->second;
}

/// Token grid as tensors "shape" (1x2: height, width) and "frame.<i>".
inline TensorArchive pack_tokens(const TokenGrid& g) {
  TensorArchive a;
  Matrix shape(1, 2);
  shape << g.height, g.width;
  a["shape"] = shape;
  for (std::size_t i = 0; i < g.frames.size(); ++i) a["frame." + std::to_string(i)] = g.frames[i];
  return a;
}

inline TokenGrid unpack_tokens(const TensorArchive& a) {
  const Matrix& shape = tensor(a, "shape");
  if (shape.rows() != 1 || shape.cols() != 2) throw Error(Errc::parse, "token shape tensor must be 1x2");
  TokenGrid g;
  g.height = static_cast<int>(shape(0, 0));
  g.width = static_cast<int>(shape(0, 1));
  for (std::size_t i = 0;; ++i) {
    auto it = a.find("frame." + std::to_string(i));
    if (it == a.end()) break;
    g.frames.push_back(it->second);
  }
  if (g.frames.empty()) throw Error(Errc::parse, "token archive has no frames");
  g.channels = static_cast<int>(g.frames.front().cols());
  try {
    g.validate();
  } catch (const Error& e) {
    throw Error(Errc::parse, std::string("token archive: ") + e.what());
  }
  return g;
}

namespace detail {

inline void put_norm(TensorArchive& a, const std::string& p, const toy::LayerNorm& n) {
  a[p + ".gamma"] = n.gamma;
  a[p + ".beta"] = n.beta;
}
inline void put_mlp(TensorArchive& a, const std::string& p, const toy::Mlp& m) {
  a[p + ".w1"] = m.w1;
  a[p + ".b1"] = m.b1;
  a[p + ".w2"] = m.w2;
  a[p + ".b2"] = m.b2;
}
inline void put_attn(TensorArchive& a, const std::string& p, const toy::AttentionWeights& w) {
  put_norm(a, p + ".norm1", w.norm1);
  a[p + ".wq"] = w.wq;
  a[p + ".wk"] = w.wk;
  a[p + ".wv"] = w.wv;
  a[p + ".wo"] = w.wo;
  put_norm(a, p + ".norm2", w.norm2);
  put_mlp(a, p + ".mlp", w.mlp);
}
inline RowVector row(const TensorArchive& a, const std::string& name) {
  const Matrix& m = tensor(a, name);
  if (m.rows() != 1) throw Error(Errc::parse, "tensor '" + name + "' must be a row vector");
  return m.row(0);
}
inline toy::LayerNorm get_norm(const TensorArchive& a, const std::string& p) {
  return {row(a, p + ".gamma"), row(a, p + ".beta")};
}
inline toy::Mlp get_mlp(const TensorArchive& a, const std::string& p) {
  return {tensor(a, p + ".w1"), row(a, p + ".b1"), tensor(a, p + ".w2"), row(a, p + ".b2")};
}
inline toy::AttentionWeights get_attn(const TensorArchive& a, const std::string& p) {
  return {get_norm(a, p + ".norm1"), tensor(a, p + ".wq"), tensor(a, p + ".wk"), tensor(a, p + ".wv"),
          tensor(a, p + ".wo"),      get_norm(a, p + ".norm2"), get_mlp(a, p + ".mlp")};
}

}  // namespace detail

inline TensorArchive pack_weights(const toy::DualStreamWeights& w) {
  TensorArchive a;
  Matrix rope(1, 3);
  rope << w.rope.base_frequency, w.rope.l_max, w.rope.head_dim;
  a["rope"] = rope;
  for (std::size_t i = 0; i < w.lr_stream.size(); ++i) {
    const std::string p = "lr." + std::to_string(i);
    detail::put_attn(a, p + ".frame", w.lr_stream[i].frame);
    detail::put_attn(a, p + ".global", w.lr_stream[i].global);
  }
  for (std::size_t i = 0; i < w.adapter.size(); ++i) {
    const std::string p = "adapter." + std::to_string(i);
    const auto& b = w.adapter[i];
    detail::put_norm(a, p + ".norm_q", b.norm_q);
    detail::put_norm(a, p + ".norm_kv", b.norm_kv);
    a[p + ".cross_q"] = b.cross_q;
    a[p + ".cross_k"] = b.cross_k;
    a[p + ".cross_v"] = b.cross_v;
    a[p + ".cross_o"] = b.cross_o;
    detail::put_norm(a, p + ".norm_self", b.norm_self);
    a[p + ".self_q"] = b.self_q;
    a[p + ".self_k"] = b.self_k;
    a[p + ".self_v"] = b.self_v;
    a[p + ".self_o"] = b.self_o;
    detail::put_norm(a, p + ".norm_mlp", b.norm_mlp);
    detail::put_mlp(a, p + ".mlp", b.mlp);
  }
  return a;
}

inline toy::DualStreamWeights unpack_weights(const TensorArchive& a) {
  toy::DualStreamWeights w;
  const RowVector rope = detail::row(a, "rope");
  if (rope.size() != 3) throw Error(Errc::parse, "rope tensor must be 1x3");
  w.rope = {rope[0], static_cast<int>(rope[1]), static_cast<int>(rope[2])};
  for (std::size_t i = 0; a.contains("lr." + std::to_string(i) + ".frame.wq"); ++i) {
    const std::string p = "lr." + std::to_string(i);
    w.lr_stream.push_back({detail::get_attn(a, p + ".frame"), detail::get_attn(a, p + ".global")});
  }
  for (std::size_t i = 0; a.contains("adapter." + std::to_string(i) + ".cross_q"); ++i) {
    const std::string p = "adapter." + std::to_string(i);
    toy::AdapterWeights b;
    b.norm_q = detail::get_norm(a, p + ".norm_q");
    b.norm_kv = detail::get_norm(a, p + ".norm_kv");
    b.cross_q = tensor(a, p + ".cross_q");
    b.cross_k = tensor(a, p + ".cross_k");
    b.cross_v = tensor(a, p + ".cross_v");
    b.cross_o = tensor(a, p + ".cross_o");
    b.norm_self = detail::get_norm(a, p + ".norm_self");
    b.self_q = tensor(a, p + ".self_q");
    b.self_k = tensor(a, p + ".self_k");
    b.self_v = tensor(a, p + ".self_v");
    b.self_o = tensor(a, p + ".self_o");
    b.norm_mlp = detail::get_norm(a, p + ".norm_mlp");
    b.mlp = detail::get_mlp(a, p + ".mlp");
    w.adapter.push_back(std::move(b));
  }
  return w;
}

}  // namespace geomeval::io
