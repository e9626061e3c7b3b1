#pragma once

#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "voxin/common.hpp"

namespace vx {

// Contract for 1D discrete Fourier transforms of admissible sizes.  A plan is
// immutable and thread-safe; `forward`/`inverse` operate in place on one
// contiguous line (inverse is unnormalized — callers apply 1/N once).
template <class T>
class Dft1d {
 public:
  virtual ~Dft1d() = default;
  virtual i64 size() const = 0;
  virtual void forward(std::complex<T>* line) const = 0;
  virtual void inverse(std::complex<T>* line) const = 0;
};

template <class T>
class DftEngine {
 public:
  virtual ~DftEngine() = default;
  virtual const char* name() const = 0;
  // May be called concurrently; plans are cached and shared.
  virtual std::shared_ptr<const Dft1d<T>> plan(i64 n) const = 0;
};

namespace detail {

template <class T>
std::vector<std::complex<T>> unit_roots(i64 n) {
  // roots[j] = exp(-2*pi*i*j/n), computed in double for accuracy
  std::vector<std::complex<T>> roots(static_cast<std::size_t>(n));
  for (i64 j = 0; j < n; ++j) {
    const double a = -2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
    roots[static_cast<std::size_t>(j)] = {static_cast<T>(std::cos(a)), static_cast<T>(std::sin(a))};
  }
  return roots;
}

// Direct O(n^2) summation.  Slow but obviously correct; used as the
// deterministic reference engine.
template <class T>
class DirectPlan final : public Dft1d<T> {
 public:
  explicit DirectPlan(i64 n) : n_(n), roots_(unit_roots<T>(n)) {}

  i64 size() const override { return n_; }
  void forward(std::complex<T>* line) const override { run(line, false); }
  void inverse(std::complex<T>* line) const override { run(line, true); }

 private:
  void run(std::complex<T>* line, bool inv) const {
    thread_local std::vector<std::complex<T>> out;
    out.assign(static_cast<std::size_t>(n_), std::complex<T>(0));
    for (i64 k = 0; k < n_; ++k) {
      std::complex<T> acc(0);
      for (i64 j = 0; j < n_; ++j) {
        std::complex<T> w = roots_[static_cast<std::size_t>((j * k) % n_)];
        if (inv) w = std::conj(w);
        acc += line[j] * w;
      }
      out[static_cast<std::size_t>(k)] = acc;
    }
    std::copy(out.begin(), out.end(), line);
  }

  i64 n_;
  std::vector<std::complex<T>> roots_;
};

// Mixed-radix Cooley-Tukey for sizes whose prime factors are in
// {2,3,5,7,11,13}; prime base cases use direct summation.
template <class T>
class MixedRadixPlan final : public Dft1d<T> {
 public:
  explicit MixedRadixPlan(i64 n) : n_(n), roots_(unit_roots<T>(n)) {
    i64 m = n;
    for (i64 p : {2, 3, 5, 7, 11, 13}) {
      while (m % p == 0) {
        factors_.push_back(p);
        m /= p;
      }
    }
    require(m == 1, "MixedRadixPlan: size has a prime factor outside {2,3,5,7,11,13}");
  }

  i64 size() const override { return n_; }
  void forward(std::complex<T>* line) const override { run(line, false); }
  void inverse(std::complex<T>* line) const override { run(line, true); }

 private:
  using C = std::complex<T>;

  std::complex<T> root(i64 t, bool inv) const {
    const C w = roots_[static_cast<std::size_t>(t % n_)];
    return inv ? std::conj(w) : w;
  }

  // y[k] = sum_j x[j*xstride] * W_n^{jk}, where W_n = W_{n_}^{wstep}
  void rec(const C* x, i64 xstride, C* y, i64 n, i64 wstep, std::size_t level, bool inv) const {
    if (n == 1) {
      y[0] = x[0];
      return;
    }
    const i64 p = factors_[level];
    const i64 m = n / p;
    if (m == 1) {
      // prime base case, direct summation
      for (i64 k = 0; k < p; ++k) {
        C acc(0);
        for (i64 j = 0; j < p; ++j) acc += x[j * xstride] * root(j * k * wstep, inv);
        y[k] = acc;
      }
      return;
    }
    for (i64 q = 0; q < p; ++q) rec(x + q * xstride, xstride * p, y + q * m, m, wstep * p, level + 1, inv);
    // combine p interleaved sub-transforms; read and write sets coincide per k1
    C t[13];
    for (i64 k1 = 0; k1 < m; ++k1) {
      for (i64 q = 0; q < p; ++q) t[q] = y[q * m + k1] * root(q * k1 * wstep, inv);
      for (i64 k2 = 0; k2 < p; ++k2) {
        C acc(0);
        for (i64 q = 0; q < p; ++q) acc += t[q] * root(q * k2 * m * wstep, inv);
        y[k1 + m * k2] = acc;
      }
    }
  }

  void run(C* line, bool inv) const {
    thread_local std::vector<C> scratch;
    scratch.assign(static_cast<std::size_t>(n_), C(0));
    rec(line, 1, scratch.data(), n_, 1, 0, inv);
    std::copy(scratch.begin(), scratch.end(), line);
  }

  i64 n_;
  std::vector<C> roots_;
  std::vector<i64> factors_;
};

template <class T, class PlanT>
class CachingEngine final : public DftEngine<T> {
 public:
  explicit CachingEngine(const char* name) : name_(name) {}
  const char* name() const override { return name_; }

  std::shared_ptr<const Dft1d<T>> plan(i64 n) const override {
    require(n > 0, "DftEngine: size must be positive");
    std::lock_guard<std::mutex> lk(mu_);
    auto it = cache_.find(n);
    if (it != cache_.end()) return it->second;
    auto p = std::make_shared<const PlanT>(n);
    cache_.emplace(n, p);
    return p;
  }

 private:
  const char* name_;
  mutable std::mutex mu_;
  mutable std::map<i64, std::shared_ptr<const Dft1d<T>>> cache_;
};

}  // namespace detail

template <class T>
const DftEngine<T>& reference_dft_engine() {
  static detail::CachingEngine<T, detail::DirectPlan<T>> e("reference");
  return e;
}

template <class T>
const DftEngine<T>& fast_dft_engine() {
  static detail::CachingEngine<T, detail::MixedRadixPlan<T>> e("mixed-radix");
  return e;
}

}  // namespace vx
