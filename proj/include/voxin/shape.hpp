#pragma once

#include <limits>

#include "voxin/common.hpp"

namespace vx {

// Dimensions of a batched multi-channel volume: batch s, feature maps f,
// spatial x*y*z.  Row-major storage, z fastest.
struct Shape5 {
  i64 s = 1, f = 1;
  vec3 n;

  constexpr Shape5() = default;
  constexpr Shape5(i64 s_, i64 f_, vec3 n_) : s(s_), f(f_), n(n_) {}
  constexpr Shape5(i64 s_, i64 f_, i64 x, i64 y, i64 z) : s(s_), f(f_), n{x, y, z} {}

  constexpr bool operator==(const Shape5&) const = default;

  constexpr i64 elements() const { return s * f * n.x * n.y * n.z; }
  constexpr i64 voxels() const { return n.elements(); }

  // strides of the row-major layout
  constexpr i64 stride_z() const { return 1; }
  constexpr i64 stride_y() const { return n.z; }
  constexpr i64 stride_x() const { return n.y * n.z; }
  constexpr i64 stride_f() const { return n.x * n.y * n.z; }
  constexpr i64 stride_s() const { return f * n.x * n.y * n.z; }

  constexpr i64 index(i64 is, i64 jf, i64 ix, i64 iy, i64 iz) const {
    return ((((is * f) + jf) * n.x + ix) * n.y + iy) * n.z + iz;
  }

  void validate() const {
    require(s > 0 && f > 0 && n.all_positive(), "Shape5: all extents must be positive");
    // guard element-count overflow
    const i64 lim = std::numeric_limits<i64>::max();
    i64 acc = s;
    for (i64 d : {f, n.x, n.y, n.z}) {
      require(acc <= lim / d, "Shape5: element count overflows");
      acc *= d;
    }
  }
};

inline std::string to_string(const Shape5& sh) {
  return "(" + std::to_string(sh.s) + "," + std::to_string(sh.f) + "," + to_string(sh.n) + ")";
}

}  // namespace vx
