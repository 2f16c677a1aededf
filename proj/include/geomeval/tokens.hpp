#pragma once

#include <Eigen/Core>

#include <vector>

#include "geomeval/error.hpp"

namespace geomeval {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Per-frame grids of feature tokens sharing one 2-D patch lattice.
///
/// Frame f holds an (h·w)×C matrix whose row r·w + c is the token at lattice
/// position (r, c). All frames use the same positions; there is no temporal index.
struct TokenGrid {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<Matrix> frames;

  TokenGrid() = default;
  TokenGrid(int n_frames, int h, int w, int c)
      : height(h), width(w), channels(c), frames(static_cast<std::size_t>(n_frames), Matrix::Zero(h * w, c)) {}

  int frame_count() const noexcept { return static_cast<int>(frames.size()); }
  int tokens_per_frame() const noexcept { return height * width; }

  /// Lattice coordinates (row, col) of every token, in storage order.
  std::vector<Eigen::Vector2d> positions() const {
    std::vector<Eigen::Vector2d> out;
    out.reserve(static_cast<std::size_t>(height) * width);
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) out.emplace_back(r, c);
    return out;
  }

  bool same_shape(const TokenGrid& o) const noexcept {
    return height == o.height && width == o.width && channels == o.channels && frames.size() == o.frames.size();
  }

  void validate() const {
    for (const auto& f : frames)
      if (f.rows() != height * width || f.cols() != channels)
        throw Error(Errc::shape_mismatch, "token grid frame has inconsistent shape");
  }
};

}  // namespace geomeval
