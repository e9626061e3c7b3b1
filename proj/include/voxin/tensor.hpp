#pragma once

#include <algorithm>
#include <array>
#include <complex>
#include <vector>

#include "voxin/shape.hpp"

namespace vx {

// A dense batched volume.  Storage is owned and contiguous; each (s,f) image
// is a contiguous x*y*z block.  Tensors are immutable once built except
// through explicitly obtained mutable views, so completed ones can be shared
// freely between workers.
template <class T>
class Tensor5 {
 public:
  Tensor5() = default;

  explicit Tensor5(Shape5 shape) : shape_(shape) {
    shape_.validate();
    data_.assign(static_cast<std::size_t>(shape_.elements()), T(0));
  }

  Tensor5(Shape5 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    shape_.validate();
    require(static_cast<i64>(data_.size()) == shape_.elements(),
            "Tensor5: data size does not match shape");
  }

  const Shape5& shape() const { return shape_; }
  i64 size() const { return static_cast<i64>(data_.size()); }
  bool empty() const { return data_.empty(); }

  const T* data() const { return data_.data(); }
  T* data() { return data_.data(); }

  const T& at(i64 s, i64 f, i64 x, i64 y, i64 z) const {
    return data_[static_cast<std::size_t>(shape_.index(s, f, x, y, z))];
  }
  T& at(i64 s, i64 f, i64 x, i64 y, i64 z) {
    return data_[static_cast<std::size_t>(shape_.index(s, f, x, y, z))];
  }

  // contiguous image block for one (s, f) pair
  const T* image(i64 s, i64 f) const { return data() + shape_.index(s, f, 0, 0, 0); }
  T* image(i64 s, i64 f) { return data() + shape_.index(s, f, 0, 0, 0); }

  // drops the storage; size() becomes 0
  void release() {
    data_.clear();
    data_.shrink_to_fit();
  }

 private:
  Shape5 shape_;
  std::vector<T> data_;
};

// Immutable view of one contiguous x*y*z image.
template <class T>
struct ConstView3 {
  const T* data = nullptr;
  vec3 n;

  const T& at(i64 x, i64 y, i64 z) const { return data[(x * n.y + y) * n.z + z]; }
};

template <class T>
ConstView3<T> image_view(const Tensor5<T>& t, i64 s, i64 f) {
  return {t.image(s, f), t.shape().n};
}

// Logical meaning of a storage axis of a ComplexTensor.
enum class Axis : unsigned char { batch, feature, x, y, z };

inline const char* axis_name(Axis a) {
  switch (a) {
    case Axis::batch: return "batch";
    case Axis::feature: return "feature";
    case Axis::x: return "x";
    case Axis::y: return "y";
    default: return "z";
  }
}

// Frequency-domain tensor of rank <= 5.  Row-major, last storage axis fastest.
// `layout[a]` names the logical axis carried by storage axis `a`; when one
// spatial axis stores only the non-negative half of a real transform,
// `half_extent` records that axis's full padded length (0 when no axis is
// halved).
template <class T>
class ComplexTensor {
 public:
  using value_type = std::complex<T>;

  ComplexTensor() = default;

  ComplexTensor(std::vector<i64> dims, std::vector<Axis> layout, i64 half_extent = 0)
      : dims_(std::move(dims)), layout_(std::move(layout)), half_extent_(half_extent) {
    require(!dims_.empty() && dims_.size() <= 5, "ComplexTensor: rank must be 1..5");
    require(dims_.size() == layout_.size(), "ComplexTensor: layout rank mismatch");
    i64 total = 1;
    for (i64 d : dims_) {
      require(d > 0, "ComplexTensor: extents must be positive");
      total *= d;
    }
    data_.assign(static_cast<std::size_t>(total), value_type(0));
  }

  int rank() const { return static_cast<int>(dims_.size()); }
  const std::vector<i64>& dims() const { return dims_; }
  const std::vector<Axis>& layout() const { return layout_; }
  i64 half_extent() const { return half_extent_; }
  void set_half_extent(i64 e) { half_extent_ = e; }

  i64 size() const { return static_cast<i64>(data_.size()); }
  const value_type* data() const { return data_.data(); }
  value_type* data() { return data_.data(); }

  i64 stride(int axis) const {
    i64 s = 1;
    for (int a = rank() - 1; a > axis; --a) s *= dims_[static_cast<std::size_t>(a)];
    return s;
  }

  i64 index(const std::array<i64, 5>& idx) const {
    i64 off = 0;
    for (int a = 0; a < rank(); ++a) off = off * dims_[static_cast<std::size_t>(a)] + idx[static_cast<std::size_t>(a)];
    return off;
  }

  const value_type& at(const std::array<i64, 5>& idx) const { return data_[static_cast<std::size_t>(index(idx))]; }
  value_type& at(const std::array<i64, 5>& idx) { return data_[static_cast<std::size_t>(index(idx))]; }

  void release() {
    data_.clear();
    data_.shrink_to_fit();
  }

 private:
  std::vector<i64> dims_;
  std::vector<Axis> layout_;
  i64 half_extent_ = 0;
  std::vector<value_type> data_;
};

// out[sigma(idx)] = in[idx]: storage axis a of the input becomes storage axis
// sigma[a] of the output; dims and layout tags move with their axis.
template <class T>
ComplexTensor<T> permute(const ComplexTensor<T>& in, const std::vector<int>& sigma) {
  const int r = in.rank();
  require(static_cast<int>(sigma.size()) == r, "permute: sigma rank mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int v : sigma) {
    require(v >= 0 && v < r && !seen[static_cast<std::size_t>(v)], "permute: sigma is not a permutation");
    seen[static_cast<std::size_t>(v)] = true;
  }

  std::vector<i64> odims(static_cast<std::size_t>(r));
  std::vector<Axis> olayout(static_cast<std::size_t>(r));
  for (int a = 0; a < r; ++a) {
    odims[static_cast<std::size_t>(sigma[static_cast<std::size_t>(a)])] = in.dims()[static_cast<std::size_t>(a)];
    olayout[static_cast<std::size_t>(sigma[static_cast<std::size_t>(a)])] = in.layout()[static_cast<std::size_t>(a)];
  }
  ComplexTensor<T> out(odims, olayout, in.half_extent());

  std::array<i64, 5> idx{0, 0, 0, 0, 0};
  std::array<i64, 5> oidx{0, 0, 0, 0, 0};
  const i64 total = in.size();
  for (i64 flat = 0; flat < total; ++flat) {
    for (int a = 0; a < r; ++a) oidx[static_cast<std::size_t>(sigma[static_cast<std::size_t>(a)])] = idx[static_cast<std::size_t>(a)];
    out.data()[out.index(oidx)] = in.data()[flat];
    // odometer increment (last axis fastest, matching flat order)
    for (int a = r - 1; a >= 0; --a) {
      if (++idx[static_cast<std::size_t>(a)] < in.dims()[static_cast<std::size_t>(a)]) break;
      idx[static_cast<std::size_t>(a)] = 0;
    }
  }
  return out;
}

// Copies `in` into the low corner of a zero tensor with extents
// `target` (per-axis target >= source); batch and feature are preserved.
template <class T>
Tensor5<T> embed_zero(const Tensor5<T>& in, vec3 target) {
  const Shape5& sh = in.shape();
  require(target.x >= sh.n.x && target.y >= sh.n.y && target.z >= sh.n.z,
          "embed_zero: target extents must be >= source extents");
  Tensor5<T> out(Shape5{sh.s, sh.f, target});
  for (i64 s = 0; s < sh.s; ++s)
    for (i64 f = 0; f < sh.f; ++f)
      for (i64 x = 0; x < sh.n.x; ++x)
        for (i64 y = 0; y < sh.n.y; ++y) {
          const T* src = in.data() + sh.index(s, f, x, y, 0);
          T* dst = out.data() + out.shape().index(s, f, x, y, 0);
          std::copy(src, src + sh.n.z, dst);
        }
  return out;
}

}  // namespace vx
