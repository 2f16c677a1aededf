#pragma once

#include <cassert>
#include <cstdint>
#include <span>
#include <vector>

#include "geomeval/error.hpp"

namespace geomeval {

/// Dense row-major 2-D grid.
template <class T>
class Grid {
 public:
  Grid() = default;
  Grid(int rows, int cols, const T& fill = T{})
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw Error(Errc::invalid_argument, "negative grid dimension");
  }

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool same_shape(const auto& o) const noexcept { return rows_ == o.rows() && cols_ == o.cols(); }

  T& operator()(int r, int c) {
    assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }
  const T& operator()(int r, int c) const {
    assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }

  std::span<T> flat() noexcept { return data_; }
  std::span<const T> flat() const noexcept { return data_; }

  bool operator==(const Grid&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

/// 1 = valid, 0 = invalid. Bytes rather than bool so the storage is addressable.
using Mask = Grid<std::uint8_t>;

/// Scalar field with validity mask (depth, inverse depth, filter responses).
struct ScalarMap {
  Grid<double> values;
  Mask mask;

  ScalarMap() = default;
  ScalarMap(int rows, int cols, double fill = 0.0, std::uint8_t valid = 1)
      : values(rows, cols, fill), mask(rows, cols, valid) {}

  int rows() const noexcept { return values.rows(); }
  int cols() const noexcept { return values.cols(); }
  bool valid(int r, int c) const { return mask(r, c) != 0; }
};

}  // namespace geomeval
