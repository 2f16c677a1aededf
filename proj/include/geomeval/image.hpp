#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "geomeval/grid.hpp"

namespace geomeval::image {

inline int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

/// Separable Gaussian blur with replicated borders; kernel radius ceil(3σ). σ ≤ 0 is a copy.
inline Grid<double> gaussian_blur(const Grid<double>& img, double sigma) {
  if (!(sigma > 0.0)) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;

  const int rows = img.rows(), cols = img.cols();
  Grid<double> tmp(rows, cols), out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img(r, clamp_index(c + i, cols));
      tmp(r, c) = acc;
    }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp(clamp_index(r + i, rows), c);
      out(r, c) = acc;
    }
  return out;
}

struct Gradients {
  Grid<double> gx, gy;
};

/// 3x3 Sobel derivatives (x to the right, y downward), replicated borders.
inline Gradients sobel(const Grid<double>& img) {
  const int rows = img.rows(), cols = img.cols();
  Gradients g{Grid<double>(rows, cols), Grid<double>(rows, cols)};
  auto at = [&](int r, int c) { return img(clamp_index(r, rows), clamp_index(c, cols)); };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      g.gx(r, c) = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1)) -
                   (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
      g.gy(r, c) = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1)) -
                   (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
    }
  return g;
}

/// Canny edges on a real-valued image: Sobel magnitude, 4-sector non-maximum
/// suppression, then 8-connected hysteresis between `low` and `high`.
/// The one-pixel image border never carries an edge.
inline Mask canny(const Grid<double>& img, double low, double high) {
  const int rows = img.rows(), cols = img.cols();
  const Gradients g = sobel(img);
  Grid<double> mag(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) mag(r, c) = std::hypot(g.gx(r, c), g.gy(r, c));

  Grid<double> thin(rows, cols, 0.0);
  for (int r = 1; r + 1 < rows; ++r)
    for (int c = 1; c + 1 < cols; ++c) {
      const double m = mag(r, c);
      if (m <= 0.0) continue;
      double deg = std::atan2(g.gy(r, c), g.gx(r, c)) * 180.0 / std::numbers::pi;
      if (deg < 0.0) deg += 180.0;
      int dr = 0, dc = 1;  // neighbour on the positive side of the gradient
      if (deg >= 22.5 && deg < 67.5) {
        dr = 1;
        dc = 1;
      } else if (deg >= 67.5 && deg < 112.5) {
        dr = 1;
        dc = 0;
      } else if (deg >= 112.5 && deg < 157.5) {
        dr = 1;
        dc = -1;
      }
      // Strict on one side, non-strict on the other: a two-pixel plateau keeps exactly one.
      if (m > mag(r - dr, c - dc) && m >= mag(r + dr, c + dc)) thin(r, c) = m;
    }

  Mask edges(rows, cols, 0);
  std::vector<std::pair<int, int>> stack;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (thin(r, c) >= high && thin(r, c) > 0.0) {
        edges(r, c) = 1;
        stack.emplace_back(r, c);
      }
  while (!stack.empty()) {
    const auto [r, c] = stack.back();
    stack.pop_back();
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        const int rr = r + dr, cc = c + dc;
        if (rr < 0 || rr >= rows || cc < 0 || cc >= cols || edges(rr, cc)) continue;
        if (thin(rr, cc) >= low && thin(rr, cc) > 0.0) {
          edges(rr, cc) = 1;
          stack.emplace_back(rr, cc);
        }
      }
  }
  return edges;
}

namespace detail {

// Exact 1-D squared distance transform of a sampled function (lower envelope of parabolas).
// Samples equal to infinity contribute no parabola.
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s = 0.0;
    while (true) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
      if (s > z[k]) break;
      --k;  // z[0] = -inf stops this at k = 0
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), inf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    d[q] = dq * dq + f[v[j]];
  }
}

}  // namespace detail

/// Exact squared Euclidean distance from every pixel to the nearest set pixel of `features`
/// (infinity when there is none). Values are exact integers.
inline Grid<double> squared_distance_transform(const Mask& features) {
  const int rows = features.rows(), cols = features.cols();
  constexpr double inf = std::numeric_limits<double>::infinity();
  Grid<double> out(rows, cols, inf);
  std::vector<double> f, d;
  f.resize(rows);
  d.resize(rows);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) f[r] = features(r, c) ? 0.0 : inf;
    detail::edt_1d(f, d);
    for (int r = 0; r < rows; ++r) out(r, c) = d[r];
  }
  f.resize(cols);
  d.resize(cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) f[c] = out(r, c);
    detail::edt_1d(f, d);
    for (int c = 0; c < cols; ++c) out(r, c) = d[c];
  }
  return out;
}

}  // namespace geomeval::image
