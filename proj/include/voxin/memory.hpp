#pragma once

#include <complex>
#include <mutex>
#include <string>

#include "voxin/common.hpp"

namespace vx {

// Counts live buffer footprints in real-scalar equivalents (a complex element
// counts as two scalars; the scalar width itself is irrelevant).  An optional
// cap turns over-allocation into resource_exhausted, which is how the device
// executor enforces its memory model at run time.
class MemoryTracker {
 public:
  MemoryTracker() = default;
  explicit MemoryTracker(i64 cap_scalars) : cap_(cap_scalars) {}

  void charge(i64 scalars) {
    if (scalars <= 0) return;
    std::lock_guard<std::mutex> lk(mu_);
    if (cap_ >= 0 && current_ + scalars > cap_)
      throw resource_exhausted("memory cap exceeded: need " + std::to_string(current_ + scalars) +
                               " scalars, cap " + std::to_string(cap_));
    current_ += scalars;
    if (current_ > peak_) peak_ = current_;
  }

  void release(i64 scalars) {
    if (scalars <= 0) return;
    std::lock_guard<std::mutex> lk(mu_);
    current_ -= scalars;
  }

  i64 current() const {
    std::lock_guard<std::mutex> lk(mu_);
    return current_;
  }
  i64 peak() const {
    std::lock_guard<std::mutex> lk(mu_);
    return peak_;
  }
  i64 cap() const { return cap_; }

 private:
  mutable std::mutex mu_;
  i64 current_ = 0;
  i64 peak_ = 0;
  i64 cap_ = -1;  // negative: unlimited
};

// RAII charge against a tracker (no-op when tracker is null).
class ScopedCharge {
 public:
  ScopedCharge() = default;
  ScopedCharge(MemoryTracker* t, i64 scalars) : t_(t), n_(scalars) {
    if (t_) t_->charge(n_);
  }
  ~ScopedCharge() { reset(); }

  ScopedCharge(const ScopedCharge&) = delete;
  ScopedCharge& operator=(const ScopedCharge&) = delete;
  ScopedCharge(ScopedCharge&& o) noexcept : t_(o.t_), n_(o.n_) { o.t_ = nullptr; }
  ScopedCharge& operator=(ScopedCharge&& o) noexcept {
    if (this != &o) {
      reset();
      t_ = o.t_;
      n_ = o.n_;
      o.t_ = nullptr;
    }
    return *this;
  }

  void reset() {
    if (t_) t_->release(n_);
    t_ = nullptr;
  }

 private:
  MemoryTracker* t_ = nullptr;
  i64 n_ = 0;
};

template <class Elem>
constexpr i64 scalars_per_element() {
  return 1;
}
template <>
constexpr i64 scalars_per_element<std::complex<float>>() {
  return 2;
}
template <>
constexpr i64 scalars_per_element<std::complex<double>>() {
  return 2;
}

// Peak working set actually observed while a primitive ran, next to the
// closed-form model it is expected to track.
struct MemoryAudit {
  double peak = 0;   // real-scalar equivalents, audited
  double model = 0;  // real-scalar equivalents, modeled
};

}  // namespace vx
