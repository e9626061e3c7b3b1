#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vx {

using i64 = std::int64_t;

// Thrown when a computation would exceed a configured memory or workspace cap.
struct resource_exhausted : std::runtime_error {
  explicit resource_exhausted(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

// Cubic-or-anisotropic spatial extents, x slowest / z fastest in memory.
struct vec3 {
  i64 x = 1, y = 1, z = 1;

  constexpr i64 elements() const { return x * y * z; }
  constexpr bool operator==(const vec3&) const = default;

  constexpr i64 operator[](int a) const { return a == 0 ? x : (a == 1 ? y : z); }
  i64& operator[](int a) { return a == 0 ? x : (a == 1 ? y : z); }

  static constexpr vec3 cube(i64 e) { return {e, e, e}; }
  constexpr bool all_positive() const { return x > 0 && y > 0 && z > 0; }
  constexpr i64 max() const { return x > y ? (x > z ? x : z) : (y > z ? y : z); }
};

inline vec3 operator+(vec3 a, vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline vec3 operator-(vec3 a, vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline vec3 operator*(vec3 a, vec3 b) { return {a.x * b.x, a.y * b.y, a.z * b.z}; }

inline std::string to_string(const vec3& v) {
  return std::to_string(v.x) + "x" + std::to_string(v.y) + "x" + std::to_string(v.z);
}

}  // namespace vx
