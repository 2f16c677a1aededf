#pragma once

#include <stdexcept>
#include <string>

namespace geomeval {

enum class Errc {
  parse,           // malformed file or spec
  shape_mismatch,  // grids, frame counts or trajectories disagree
  empty_overlap,   // no valid pixel / point left to evaluate
  degenerate,      // rank-deficient or otherwise ill-posed input
  invalid_argument,
  io,
};

inline const char* to_string(Errc e) {
  switch (e) {
    case Errc::parse: return "parse";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::empty_overlap: return "empty_overlap";
    case Errc::degenerate: return "degenerate";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace geomeval
