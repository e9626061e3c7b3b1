#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>

#include "voxin/dft.hpp"
#include "voxin/memory.hpp"
#include "voxin/parallel.hpp"
#include "voxin/tensor.hpp"

namespace vx {

// Which padded sizes a 1D transform backend accepts: products of the listed
// small primes, optionally with the combined exponent of 11 and 13 capped.
struct RadixProfile {
  std::vector<int> primes{2, 3, 5, 7, 11, 13};
  std::optional<int> max_11_13_exponent_sum;  // e.g. 1: at most one factor of 11 or 13

  // host transforms accept one factor of 11 or 13
  static RadixProfile host_default() { return {{2, 3, 5, 7, 11, 13}, 1}; }
  // device transforms accept only {2,3,5,7}
  static RadixProfile device_default() { return {{2, 3, 5, 7}, std::nullopt}; }
  static RadixProfile unrestricted() { return {{2, 3, 5, 7, 11, 13}, std::nullopt}; }

  bool admits(i64 n) const {
    if (n <= 0) return false;
    int big = 0;
    for (int p : primes) {
      while (n % p == 0) {
        n /= p;
        if (p == 11 || p == 13) ++big;
      }
    }
    if (n != 1) return false;
    return !max_11_13_exponent_sum || big <= *max_11_13_exponent_sum;
  }

  void validate() const {
    require(std::find(primes.begin(), primes.end(), 2) != primes.end(),
            "RadixProfile: must accept powers of two");
    for (int p : primes)
      require(p == 2 || p == 3 || p == 5 || p == 7 || p == 11 || p == 13,
              "RadixProfile: primes must be in {2,3,5,7,11,13}");
  }
};

// Smallest admissible size m >= n.  Monotone in n.
inline i64 optimal_fft_size(i64 n, const RadixProfile& profile) {
  require(n > 0, "optimal_fft_size: n must be positive");
  profile.validate();
  i64 m = n;
  while (!profile.admits(m)) ++m;  // gaps between admissible sizes are tiny
  return m;
}

inline vec3 optimal_fft_sizes(vec3 n, const RadixProfile& profile) {
  return {optimal_fft_size(n.x, profile), optimal_fft_size(n.y, profile),
          optimal_fft_size(n.z, profile)};
}

// Modeled flop count of one pruned 3D real transform: an image of extent n
// padded from kernel extent k skips 1D lines that are all zero.
// Cubic closed form: C * n * log(n) * (k^2 + k*n + n^2), natural log.
inline double pruned_fft_flops(double n, double k, double C) {
  const double ln = std::log(n);
  return C * n * ln * (k * k + k * n + n * n);
}

// Modeled flop count of a dense 3D transform: C * n^3 * log(n^3) = 3*C*n^3*log n.
inline double naive_fft_flops(double n, double C) { return 3.0 * C * n * n * n * std::log(n); }

// Scratch policy for batched transforms: a cap on the scratch the transform
// may allocate (real-scalar equivalents) and the largest number of 1D lines
// processed simultaneously.
struct FftWorkspace {
  static constexpr i64 default_cap = i64(8) * (i64(1) << 20);  // 64 MiB of 64-bit scalars

  i64 capacity_scalars = default_cap;
  i64 sub_batch_limit = 64;

  static FftWorkspace with_cap(i64 cap_scalars, i64 longest_line) {
    require(cap_scalars > 0 && longest_line > 0, "FftWorkspace: positive cap and line required");
    FftWorkspace ws;
    ws.capacity_scalars = cap_scalars;
    ws.sub_batch_limit = std::max<i64>(1, cap_scalars / (2 * longest_line));
    return ws;
  }
};

// Execution knobs shared by transform and layer calls.
template <class T>
struct FftContext {
  const DftEngine<T>* engine = &fast_dft_engine<T>();
  i64 workers = 1;
  MemoryTracker* tracker = nullptr;  // optional audited-allocation sink
};

namespace detail {

template <class T>
using C = std::complex<T>;

// ---- nested (single image) pruned transform ----------------------------
//
// Forward: pad x -> x' in a real buffer, y*z real-to-complex lines along x
// into a zero complex tensor (x'' = floor(x'/2)+1, y', z'), in-place lines
// along y restricted to the z populated planes, then lines along z.

template <class T>
struct NestedDims {
  vec3 n;               // source extents
  vec3 p;               // padded extents x', y', z'
  i64 xh;               // floor(x'/2) + 1
  i64 spectrum() const { return xh * p.y * p.z; }  // complex elements
};

template <class T>
NestedDims<T> nested_dims(vec3 n, vec3 padded) {
  require(n.all_positive(), "pruned fft: extents must be positive");
  require(padded.x >= n.x && padded.y >= n.y && padded.z >= n.z,
          "pruned fft: padded extents must cover the image");
  return NestedDims<T>{n, padded, padded.x / 2 + 1};
}

// dst must hold dims.spectrum() complex elements; it is fully overwritten.
template <class T>
void pruned_forward_into(ConstView3<T> img, const NestedDims<T>& d, C<T>* dst,
                         const FftContext<T>& ctx) {
  const auto plan_x = ctx.engine->plan(d.p.x);
  const auto plan_y = ctx.engine->plan(d.p.y);
  const auto plan_z = ctx.engine->plan(d.p.z);

  std::fill(dst, dst + d.spectrum(), C<T>(0));

  // padded real buffer x' * y * z (x is the slowest axis: one linear copy)
  const i64 pad_elems = d.p.x * d.n.y * d.n.z;
  ScopedCharge pad_charge(ctx.tracker, pad_elems);
  std::vector<T> pad(static_cast<std::size_t>(pad_elems), T(0));
  std::copy(img.data, img.data + d.n.elements(), pad.data());

  const i64 yz = d.n.y * d.n.z;
  const i64 y_out = d.p.y, z_out = d.p.z;

  // y*z real-to-complex lines along x, out of place
  parallel_for(yz, ctx.workers, [&](i64 b, i64 e) {
    std::vector<C<T>> line(static_cast<std::size_t>(d.p.x));
    for (i64 l = b; l < e; ++l) {
      const i64 y = l / d.n.z, z = l % d.n.z;
      for (i64 x = 0; x < d.p.x; ++x) line[static_cast<std::size_t>(x)] = C<T>(pad[static_cast<std::size_t>(x * yz + l)], T(0));
      plan_x->forward(line.data());
      C<T>* out = dst + y * z_out + z;
      for (i64 k = 0; k < d.xh; ++k) out[k * y_out * z_out] = line[static_cast<std::size_t>(k)];
    }
  });

  // in-place lines along y, restricted to the z planes that hold data
  parallel_for(d.xh * d.n.z, ctx.workers, [&](i64 b, i64 e) {
    std::vector<C<T>> line(static_cast<std::size_t>(d.p.y));
    for (i64 l = b; l < e; ++l) {
      const i64 kx = l / d.n.z, z = l % d.n.z;
      C<T>* base = dst + kx * y_out * z_out + z;
      for (i64 y = 0; y < d.p.y; ++y) line[static_cast<std::size_t>(y)] = base[y * z_out];
      plan_y->forward(line.data());
      for (i64 y = 0; y < d.p.y; ++y) base[y * z_out] = line[static_cast<std::size_t>(y)];
    }
  });

  // in-place contiguous lines along z, all of them
  parallel_for(d.xh * d.p.y, ctx.workers, [&](i64 b, i64 e) {
    for (i64 l = b; l < e; ++l) plan_z->forward(dst + l * z_out);
  });
}

// Inverse of pruned_forward_into, pruned to the region
// [begin, begin+extent) per axis.  Destroys `spec`.  Writes
// out[x][y][z] (+=, when accumulate) with the given strides; values are
// scaled by 1/(x'*y'*z').
template <class T>
void pruned_inverse_region(C<T>* spec, const NestedDims<T>& d, vec3 begin, vec3 extent, T* out,
                           i64 out_sx, i64 out_sy, const FftContext<T>& ctx) {
  require(begin.x >= 0 && begin.y >= 0 && begin.z >= 0, "pruned inverse: negative region");
  require(begin.x + extent.x <= d.p.x && begin.y + extent.y <= d.p.y && begin.z + extent.z <= d.p.z,
          "pruned inverse: region outside padded extents");
  const auto plan_x = ctx.engine->plan(d.p.x);
  const auto plan_y = ctx.engine->plan(d.p.y);
  const auto plan_z = ctx.engine->plan(d.p.z);

  const i64 y_out = d.p.y, z_out = d.p.z;
  const i64 y_hi = begin.y + extent.y;
  const T scale = T(1.0 / (static_cast<double>(d.p.x) * static_cast<double>(d.p.y) *
                           static_cast<double>(d.p.z)));

  // inverse along z: every (kx, ky) line
  parallel_for(d.xh * d.p.y, ctx.workers, [&](i64 b, i64 e) {
    for (i64 l = b; l < e; ++l) plan_z->inverse(spec + l * z_out);
  });

  // inverse along y: only z positions inside the region matter downstream
  parallel_for(d.xh * extent.z, ctx.workers, [&](i64 b, i64 e) {
    std::vector<C<T>> line(static_cast<std::size_t>(d.p.y));
    for (i64 l = b; l < e; ++l) {
      const i64 kx = l / extent.z, z = begin.z + l % extent.z;
      C<T>* base = spec + kx * y_out * z_out + z;
      for (i64 y = 0; y < d.p.y; ++y) line[static_cast<std::size_t>(y)] = base[y * z_out];
      plan_y->inverse(line.data());
      for (i64 y = begin.y; y < y_hi; ++y) base[y * z_out] = line[static_cast<std::size_t>(y)];
    }
  });

  // inverse along x: gather the stored half, complete by Hermitian symmetry
  // (each line is the transform of a real signal), then complex inverse.
  parallel_for(extent.y * extent.z, ctx.workers, [&](i64 b, i64 e) {
    std::vector<C<T>> line(static_cast<std::size_t>(d.p.x));
    for (i64 l = b; l < e; ++l) {
      const i64 y = begin.y + l / extent.z, z = begin.z + l % extent.z;
      const C<T>* base = spec + y * z_out + z;
      for (i64 k = 0; k < d.xh; ++k) line[static_cast<std::size_t>(k)] = base[k * y_out * z_out];
      for (i64 k = d.xh; k < d.p.x; ++k) line[static_cast<std::size_t>(k)] = std::conj(line[static_cast<std::size_t>(d.p.x - k)]);
      plan_x->inverse(line.data());
      for (i64 x = 0; x < extent.x; ++x) {
        out[x * out_sx + (y - begin.y) * out_sy + (z - begin.z)] +=
            line[static_cast<std::size_t>(begin.x + x)].real() * scale;
      }
    }
  });
}

// ---- batched (permute-based) transform ----------------------------------
//
// Stage A: per-line real-to-complex along z into the result buffer, packed as
//          (b, x, y, z'') — z'' = floor(z'/2)+1.
// Stage B: permute (i,j,k,l) -> (i,j,l,k) into zero-filled scratch
//          (b, x, z'', y'), then lines along y'.
// Stage C: permute (i,j,k,l) -> (i,k,l,j) back into the zeroed result buffer
//          as (b, z'', y', x'), then lines along x'.
// The result stays in the permuted layout.

struct BatchedDims {
  i64 b = 1;
  vec3 n;   // source extents
  vec3 p;   // padded extents
  i64 zh;   // floor(z'/2) + 1
  i64 spectrum() const { return zh * p.y * p.x; }              // complex elements per image
  i64 scratch_complex() const { return b * n.x * p.y * zh; }   // stage-B buffer
};

inline BatchedDims batched_dims(i64 b, vec3 n, vec3 padded) {
  require(b > 0, "batched fft: batch must be positive");
  require(padded.x >= n.x && padded.y >= n.y && padded.z >= n.z,
          "batched fft: padded extents must cover the image");
  return BatchedDims{b, n, padded, padded.z / 2 + 1};
}

inline void check_workspace(const FftWorkspace& ws, i64 needed_complex, const char* who) {
  if (2 * needed_complex > ws.capacity_scalars)
    throw resource_exhausted(std::string(who) + ": workspace cap " +
                             std::to_string(ws.capacity_scalars) + " scalars, need " +
                             std::to_string(2 * needed_complex));
}

// images: b contiguous blocks of n.x*n.y*n.z reals.  dst: b * spectrum()
// complex elements, overwritten.  scratch: at least scratch_complex() elements.
template <class T>
void batched_forward_into(const T* images, const BatchedDims& d, C<T>* dst, C<T>* scratch,
                          const FftWorkspace& ws, const FftContext<T>& ctx) {
  const auto plan_z = ctx.engine->plan(d.p.z);
  const auto plan_y = ctx.engine->plan(d.p.y);
  const auto plan_x = ctx.engine->plan(d.p.x);

  const i64 img = d.n.elements();
  const i64 spec = d.spectrum();

  // Stage A: (b, x, y) r2c lines along z, packed into dst
  parallel_for_waves(d.b * d.n.x * d.n.y, ctx.workers, ws.sub_batch_limit, [&](i64 b0, i64 e0) {
    std::vector<C<T>> line(static_cast<std::size_t>(d.p.z));
    for (i64 l = b0; l < e0; ++l) {
      const T* src = images + l * d.n.z;  // lines are contiguous in source order
      for (i64 z = 0; z < d.n.z; ++z) line[static_cast<std::size_t>(z)] = C<T>(src[z], T(0));
      std::fill(line.begin() + static_cast<std::ptrdiff_t>(d.n.z), line.end(), C<T>(0));
      plan_z->forward(line.data());
      std::copy(line.begin(), line.begin() + static_cast<std::ptrdiff_t>(d.zh), dst + l * d.zh);
    }
  });

  // Stage B: permute (b,x,y,zh) -> (b,x,zh,y'), zero fill, lines along y'
  const i64 sb = d.b * d.n.x * d.p.y * d.zh;
  std::fill(scratch, scratch + sb, C<T>(0));
  parallel_for(d.b * d.n.x, ctx.workers, [&](i64 b0, i64 e0) {
    for (i64 bx = b0; bx < e0; ++bx) {
      const C<T>* src = dst + bx * d.n.y * d.zh;
      C<T>* dst2 = scratch + bx * d.zh * d.p.y;
      for (i64 y = 0; y < d.n.y; ++y)
        for (i64 k = 0; k < d.zh; ++k) dst2[k * d.p.y + y] = src[y * d.zh + k];
    }
  });
  parallel_for_waves(d.b * d.n.x * d.zh, ctx.workers, ws.sub_batch_limit, [&](i64 b0, i64 e0) {
    for (i64 l = b0; l < e0; ++l) plan_y->forward(scratch + l * d.p.y);
  });

  // Stage C: permute (b,x,zh,y') -> (b,zh,y',x'), zero fill, lines along x'
  std::fill(dst, dst + d.b * spec, C<T>(0));
  parallel_for(d.b, ctx.workers, [&](i64 b0, i64 e0) {
    for (i64 bi = b0; bi < e0; ++bi) {
      const C<T>* src = scratch + bi * d.n.x * d.zh * d.p.y;
      C<T>* dst2 = dst + bi * spec;
      for (i64 x = 0; x < d.n.x; ++x)
        for (i64 k = 0; k < d.zh; ++k)
          for (i64 y = 0; y < d.p.y; ++y)
            dst2[(k * d.p.y + y) * d.p.x + x] = src[(x * d.zh + k) * d.p.y + y];
    }
  });
  parallel_for_waves(d.b * d.zh * d.p.y, ctx.workers, ws.sub_batch_limit, [&](i64 b0, i64 e0) {
    for (i64 l = b0; l < e0; ++l) plan_x->forward(dst + l * d.p.x);
  });
  (void)img;
}

// Inverse of batched_forward_into pruned to [begin, begin+extent).  Destroys
// `spec` (b * spectrum() elements).  Each image is written contiguously to
// out + i*extent.elements(), scaled by 1/(x'*y'*z'); `apply` post-processes
// each written value (bias/activation hook), invoked as apply(image, value).
template <class T, class Apply>
void batched_inverse_region(C<T>* spec_data, const BatchedDims& d, vec3 begin, vec3 extent, T* out,
                            C<T>* scratch, const FftWorkspace& ws, const FftContext<T>& ctx,
                            const Apply& apply) {
  require(begin.x >= 0 && begin.y >= 0 && begin.z >= 0 && extent.all_positive(),
          "batched inverse: bad region");
  require(begin.x + extent.x <= d.p.x && begin.y + extent.y <= d.p.y && begin.z + extent.z <= d.p.z,
          "batched inverse: region outside padded extents");
  const auto plan_z = ctx.engine->plan(d.p.z);
  const auto plan_y = ctx.engine->plan(d.p.y);
  const auto plan_x = ctx.engine->plan(d.p.x);

  const i64 spec = d.spectrum();
  const T scale = T(1.0 / (static_cast<double>(d.p.x) * static_cast<double>(d.p.y) *
                           static_cast<double>(d.p.z)));

  // inverse lines along x' (contiguous), all of them
  parallel_for_waves(d.b * d.zh * d.p.y, ctx.workers, ws.sub_batch_limit, [&](i64 b0, i64 e0) {
    for (i64 l = b0; l < e0; ++l) plan_x->inverse(spec_data + l * d.p.x);
  });

  // permute (b,zh,y',x') -> (b,ex,zh,y') keeping only needed x positions
  const i64 sb = d.b * extent.x * d.zh * d.p.y;
  std::fill(scratch, scratch + sb, C<T>(0));
  parallel_for(d.b, ctx.workers, [&](i64 b0, i64 e0) {
    for (i64 bi = b0; bi < e0; ++bi) {
      const C<T>* src = spec_data + bi * spec;
      C<T>* dst2 = scratch + bi * extent.x * d.zh * d.p.y;
      for (i64 x = 0; x < extent.x; ++x)
        for (i64 k = 0; k < d.zh; ++k)
          for (i64 y = 0; y < d.p.y; ++y)
            dst2[(x * d.zh + k) * d.p.y + y] = src[(k * d.p.y + y) * d.p.x + begin.x + x];
    }
  });

  // inverse lines along y'
  parallel_for_waves(d.b * extent.x * d.zh, ctx.workers, ws.sub_batch_limit, [&](i64 b0, i64 e0) {
    for (i64 l = b0; l < e0; ++l) plan_y->inverse(scratch + l * d.p.y);
  });

  // gather z lines (stride p.y), Hermitian-complete, inverse, write region
  parallel_for_waves(d.b * extent.x * extent.y, ctx.workers, ws.sub_batch_limit, [&](i64 b0, i64 e0) {
    std::vector<C<T>> line(static_cast<std::size_t>(d.p.z));
    for (i64 l = b0; l < e0; ++l) {
      const i64 bi = l / (extent.x * extent.y);
      const i64 rest = l % (extent.x * extent.y);
      const i64 x = rest / extent.y, y = begin.y + rest % extent.y;
      const C<T>* base = scratch + ((bi * extent.x + x) * d.zh) * d.p.y + y;
      for (i64 k = 0; k < d.zh; ++k) line[static_cast<std::size_t>(k)] = base[k * d.p.y];
      for (i64 k = d.zh; k < d.p.z; ++k) line[static_cast<std::size_t>(k)] = std::conj(line[static_cast<std::size_t>(d.p.z - k)]);
      plan_z->inverse(line.data());
      T* o = out + (l / extent.y) * extent.y * extent.z + (rest % extent.y) * extent.z;
      for (i64 z = 0; z < extent.z; ++z) {
        T v = line[static_cast<std::size_t>(begin.z + z)].real() * scale;
        o[z] = apply(bi, v);
      }
    }
  });
  (void)ws;
}

}  // namespace detail

// ---- public transforms ---------------------------------------------------

// Pruned single-image transform.  Result dims (floor(x'/2)+1, y', z') with
// layout (x, y, z); half_extent records x'.
template <class T>
ComplexTensor<T> pruned_fft_forward(ConstView3<T> img, vec3 padded, const FftContext<T>& ctx = {}) {
  const auto d = detail::nested_dims<T>(img.n, padded);
  ComplexTensor<T> out({d.xh, padded.y, padded.z}, {Axis::x, Axis::y, Axis::z}, padded.x);
  ScopedCharge c(ctx.tracker, 2 * out.size());
  detail::pruned_forward_into(img, d, out.data(), ctx);
  return out;
}

// Pruned inverse restricted to the low-corner region `crop`; applies the
// 1/(x'*y'*z') normalization.  Consumes the spectrum.
template <class T>
Tensor5<T> pruned_fft_inverse(ComplexTensor<T>&& spec, vec3 crop, const FftContext<T>& ctx = {}) {
  require(spec.rank() == 3 && spec.half_extent() > 0, "pruned_fft_inverse: not a half spectrum");
  const vec3 padded{spec.half_extent(), spec.dims()[1], spec.dims()[2]};
  auto d = detail::nested_dims<T>(crop, padded);
  require(spec.dims()[0] == d.xh, "pruned_fft_inverse: inconsistent dims");
  Tensor5<T> out(Shape5{1, 1, crop});
  ScopedCharge c(ctx.tracker, out.size());
  detail::pruned_inverse_region(spec.data(), d, vec3{0, 0, 0}, crop, out.data(), crop.y * crop.z,
                                crop.z, ctx);
  spec.release();
  return out;
}

// Batched permute-based transform of b images (the s*f images of `imgs`).
// Result dims (b, floor(z'/2)+1, y', x') with layout (batch, z, y, x);
// half_extent records z'.  The result stays in this permuted layout.
template <class T>
ComplexTensor<T> batched_fft_forward(const Tensor5<T>& imgs, vec3 padded, const FftWorkspace& ws,
                                     const FftContext<T>& ctx = {}) {
  const i64 b = imgs.shape().s * imgs.shape().f;
  const auto d = detail::batched_dims(b, imgs.shape().n, padded);
  detail::check_workspace(ws, d.scratch_complex(), "batched_fft_forward");

  ComplexTensor<T> out({b, d.zh, padded.y, padded.x}, {Axis::batch, Axis::z, Axis::y, Axis::x},
                       padded.z);
  ScopedCharge cout(ctx.tracker, 2 * out.size());
  ScopedCharge cscr(ctx.tracker, 2 * d.scratch_complex());
  std::vector<std::complex<T>> scratch(static_cast<std::size_t>(d.scratch_complex()));
  detail::batched_forward_into(imgs.data(), d, out.data(), scratch.data(), ws, ctx);
  return out;
}

// Inverse of batched_fft_forward restricted to the low-corner region `crop`
// of each image; returns a (b, 1, crop) tensor.  Consumes the spectrum.
template <class T>
Tensor5<T> batched_fft_inverse(ComplexTensor<T>&& spec, vec3 crop, const FftWorkspace& ws,
                               const FftContext<T>& ctx = {}) {
  require(spec.rank() == 4 && spec.half_extent() > 0, "batched_fft_inverse: not a half spectrum");
  const i64 b = spec.dims()[0];
  const vec3 padded{spec.dims()[3], spec.dims()[2], spec.half_extent()};
  auto d = detail::batched_dims(b, crop, padded);
  require(spec.dims()[1] == d.zh, "batched_fft_inverse: inconsistent dims");

  const i64 scratch_complex = b * crop.x * d.zh * padded.y;
  detail::check_workspace(ws, scratch_complex, "batched_fft_inverse");

  Tensor5<T> out(Shape5{b, 1, crop});
  ScopedCharge cout(ctx.tracker, out.size());
  ScopedCharge cscr(ctx.tracker, 2 * scratch_complex);
  std::vector<std::complex<T>> scratch(static_cast<std::size_t>(scratch_complex));
  detail::batched_inverse_region(spec.data(), d, vec3{0, 0, 0}, crop, out.data(), scratch.data(),
                                 ws, ctx, [](i64, T v) { return v; });
  spec.release();
  return out;
}

}  // namespace vx
