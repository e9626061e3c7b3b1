#pragma once

#include <cmath>

#include "voxin/cost.hpp"
#include "voxin/fft.hpp"
#include "voxin/memory.hpp"
#include "voxin/parallel.hpp"
#include "voxin/tensor.hpp"

namespace vx {

// Weights of one convolutional layer: kernels (f_out, f_in, k) and one bias
// per output map.  The layer computes, per batch entry s and output map j,
//   O[s,j] = act(bias[j] + sum_i kernels[j,i] (*) I[s,i])
// with (*) the valid true convolution (kernel index-reversed), so output
// extents are n - k + 1.
template <class T>
struct ConvLayerParams {
  Tensor5<T> kernels;
  std::vector<T> bias;
  Activation act = Activation::identity;

  i64 features_out() const { return kernels.shape().s; }
  i64 features_in() const { return kernels.shape().f; }
  vec3 kernel_extents() const { return kernels.shape().n; }

  void validate(const Shape5& input) const {
    require(kernels.shape().f == input.f, "conv: kernel feature count mismatch");
    require(static_cast<i64>(bias.size()) == kernels.shape().s, "conv: bias count mismatch");
    const vec3 k = kernels.shape().n, n = input.n;
    require(k.x <= n.x && k.y <= n.y && k.z <= n.z, "conv: kernel larger than image");
  }
};

template <class T>
struct LayerResult {
  Tensor5<T> output;
  MemoryAudit audit;
};

enum class DirectVariant : unsigned char { naive, temp_buffer };

// Execution knobs for host primitives.
template <class T>
struct LayerContext {
  i64 workers = 1;
  const DftEngine<T>* engine = &fast_dft_engine<T>();
  RadixProfile profile = RadixProfile::host_default();
  FftWorkspace workspace;                // batched-transform scratch policy
  MemoryTracker* cap_tracker = nullptr;  // optional externally capped accounting

  FftContext<T> fft() const { return FftContext<T>{engine, workers, nullptr}; }
};

namespace detail {

// Tallies a primitive's working set and mirrors every charge into an optional
// external tracker, so a capped environment both audits and enforces.
class Audit {
 public:
  explicit Audit(MemoryTracker* mirror) : mirror_(mirror) {}
  void charge(i64 n) {
    if (mirror_) mirror_->charge(n);  // cap check first; own tally stays consistent on throw
    own_.charge(n);
  }
  void release(i64 n) {
    own_.release(n);
    if (mirror_) mirror_->release(n);
  }
  i64 peak() const { return own_.peak(); }

 private:
  MemoryTracker own_;
  MemoryTracker* mirror_;
};

class AuditCharge {
 public:
  AuditCharge() = default;
  AuditCharge(Audit& a, i64 n) : a_(&a), n_(n) { a.charge(n); }
  ~AuditCharge() { reset(); }
  AuditCharge(const AuditCharge&) = delete;
  AuditCharge& operator=(const AuditCharge&) = delete;
  AuditCharge(AuditCharge&& o) noexcept : a_(o.a_), n_(o.n_) { o.a_ = nullptr; }
  AuditCharge& operator=(AuditCharge&& o) noexcept {
    if (this != &o) {
      reset();
      a_ = o.a_;
      n_ = o.n_;
      o.a_ = nullptr;
    }
    return *this;
  }
  void reset() {
    if (a_) a_->release(n_);
    a_ = nullptr;
  }

 private:
  Audit* a_ = nullptr;
  i64 n_ = 0;
};

template <class T>
inline T activate(T v, Activation a) {
  return a == Activation::relu ? (v > T(0) ? v : T(0)) : v;
}

template <class T>
void check_no_nan(const Tensor5<T>& t, const char* who) {
  const T* p = t.data();
  for (i64 i = 0, n = t.size(); i < n; ++i)
    if (std::isnan(static_cast<double>(p[i])))
      throw std::invalid_argument(std::string(who) + ": NaN input rejected");
}

// valid true convolution of one image pair, accumulated into out
template <class T>
void accumulate_valid_conv(const T* in, vec3 n, const T* w, vec3 k, T* out, vec3 no) {
  for (i64 px = 0; px < no.x; ++px)
    for (i64 py = 0; py < no.y; ++py)
      for (i64 pz = 0; pz < no.z; ++pz) {
        T acc = T(0);
        for (i64 qx = 0; qx < k.x; ++qx)
          for (i64 qy = 0; qy < k.y; ++qy)
            for (i64 qz = 0; qz < k.z; ++qz) {
              const T wv = w[(qx * k.y + qy) * k.z + qz];
              const T iv = in[((px + k.x - 1 - qx) * n.y + (py + k.y - 1 - qy)) * n.z +
                              (pz + k.z - 1 - qz)];
              acc += wv * iv;
            }
        out[(px * no.y + py) * no.z + pz] += acc;
      }
}

}  // namespace detail

// ---- direct convolution ----------------------------------------------------

template <class T>
LayerResult<T> conv_direct(Tensor5<T> input, const ConvLayerParams<T>& params,
                           const LayerContext<T>& ctx,
                           DirectVariant variant = DirectVariant::naive) {
  params.validate(input.shape());
  const Shape5 in_sh = input.shape();
  const i64 S = in_sh.s, f = in_sh.f, fo = params.features_out();
  const vec3 n = in_sh.n, k = params.kernel_extents();
  const vec3 no = n - k + vec3{1, 1, 1};

  detail::Audit audit(ctx.cap_tracker);
  detail::AuditCharge input_charge(audit, input.size());
  Tensor5<T> out(Shape5{S, fo, no});
  detail::AuditCharge out_charge(audit, out.size());

  const bool temp = variant == DirectVariant::temp_buffer;
  detail::AuditCharge temp_charge;
  if (temp) temp_charge = detail::AuditCharge(audit, ctx.workers * no.elements());

  parallel_for(S * fo, ctx.workers, [&](i64 b, i64 e) {
    std::vector<T> scratch;
    if (temp) scratch.assign(static_cast<std::size_t>(no.elements()), T(0));
    for (i64 l = b; l < e; ++l) {
      const i64 s = l / fo, j = l % fo;
      T* o = out.image(s, j);
      for (i64 i = 0; i < f; ++i) {
        if (temp) {
          std::fill(scratch.begin(), scratch.end(), T(0));
          detail::accumulate_valid_conv(input.image(s, i), n, params.kernels.image(j, i), k,
                                        scratch.data(), no);
          for (i64 v = 0; v < no.elements(); ++v) o[v] += scratch[static_cast<std::size_t>(v)];
        } else {
          detail::accumulate_valid_conv(input.image(s, i), n, params.kernels.image(j, i), k, o, no);
        }
      }
      for (i64 v = 0; v < no.elements(); ++v)
        o[v] = detail::activate(o[v] + params.bias[static_cast<std::size_t>(j)], params.act);
    }
  });
  temp_charge.reset();

  input.release();
  input_charge.reset();

  ResourceEnv env;
  env.workers = static_cast<double>(ctx.workers);
  const double model = layer_memory(
      temp ? PrimitiveKind::direct_temp : PrimitiveKind::direct_naive, static_cast<double>(S),
      static_cast<double>(f), static_cast<double>(fo), static_cast<double>(n.elements()),
      static_cast<double>(no.elements()), 0, env);
  return {std::move(out), MemoryAudit{static_cast<double>(audit.peak()), model}};
}

// ---- FFT convolution, data-parallel ---------------------------------------
//
// All S*f input images are transformed up front (one image at a time, its 1D
// lines in parallel) and the input buffer is freed.  Then per output map i:
// each kernel is transformed once and multiply-accumulated into S output
// spectra (i outer, j inner, batch innermost, fixed order), which are
// inverted into the valid crop, biased and activated.

template <class T>
LayerResult<T> conv_fft_data_parallel(Tensor5<T> input, const ConvLayerParams<T>& params,
                                      const LayerContext<T>& ctx) {
  params.validate(input.shape());
  const Shape5 in_sh = input.shape();
  const i64 S = in_sh.s, f = in_sh.f, fo = params.features_out();
  const vec3 n = in_sh.n, k = params.kernel_extents();
  const vec3 no = n - k + vec3{1, 1, 1};
  const vec3 padded = optimal_fft_sizes(n, ctx.profile);
  const auto di = detail::nested_dims<T>(n, padded);
  const auto dk = detail::nested_dims<T>(k, padded);
  const i64 spec = di.spectrum();
  using Cx = std::complex<T>;

  detail::Audit audit(ctx.cap_tracker);
  detail::AuditCharge input_charge(audit, input.size());

  detail::AuditCharge itf_charge(audit, 2 * S * f * spec);
  std::vector<Cx> itf(static_cast<std::size_t>(S * f * spec));
  for (i64 s = 0; s < S; ++s)
    for (i64 j = 0; j < f; ++j) {
      // the transform's x'*y*z padded real staging buffer
      detail::AuditCharge pad(audit, di.p.x * n.y * n.z);
      detail::pruned_forward_into(image_view(input, s, j), di, itf.data() + (s * f + j) * spec,
                                  ctx.fft());
    }
  input.release();
  input_charge.reset();

  Tensor5<T> out(Shape5{S, fo, no});
  detail::AuditCharge out_charge(audit, out.size());
  detail::AuditCharge acc_charge(audit, 2 * S * spec);
  detail::AuditCharge ker_charge(audit, 2 * spec);
  std::vector<Cx> acc(static_cast<std::size_t>(S * spec));
  std::vector<Cx> ker(static_cast<std::size_t>(spec));

  for (i64 i = 0; i < fo; ++i) {
    std::fill(acc.begin(), acc.end(), Cx(0));
    for (i64 j = 0; j < f; ++j) {
      {
        detail::AuditCharge pad(audit, dk.p.x * k.y * k.z);
        detail::pruned_forward_into(image_view(params.kernels, i, j), dk, ker.data(), ctx.fft());
      }
      for (i64 s = 0; s < S; ++s) {
        Cx* a = acc.data() + s * spec;
        const Cx* t = itf.data() + (s * f + j) * spec;
        parallel_for(spec, ctx.workers, [&](i64 b, i64 e) {
          for (i64 v = b; v < e; ++v) a[v] += t[v] * ker[static_cast<std::size_t>(v)];
        });
      }
    }
    const T bias = params.bias[static_cast<std::size_t>(i)];
    for (i64 s = 0; s < S; ++s) {
      T* o = out.image(s, i);
      detail::pruned_inverse_region(acc.data() + s * spec, di, k - vec3{1, 1, 1}, no, o,
                                    no.y * no.z, no.z, ctx.fft());
      parallel_for(no.elements(), ctx.workers, [&](i64 b, i64 e) {
        for (i64 v = b; v < e; ++v) o[v] = detail::activate(o[v] + bias, params.act);
      });
    }
  }

  ResourceEnv env;
  env.workers = static_cast<double>(ctx.workers);
  const double model =
      layer_memory(PrimitiveKind::fft_data_parallel, static_cast<double>(S),
                   static_cast<double>(f), static_cast<double>(fo),
                   static_cast<double>(n.elements()), static_cast<double>(no.elements()),
                   transformed_real_elements(n, ctx.profile), env);
  return {std::move(out), MemoryAudit{static_cast<double>(audit.peak()), model}};
}

// ---- FFT convolution, staged batches --------------------------------------
//
// Three stages with buffers allocated and freed between them:
//   1. batched transform of the f input images of each batch entry, through a
//      reusable f-image transform scratch;
//   2. per output map: batched kernel transform, point-wise products into the
//      reused f-image scratch, fixed-order accumulation into output spectra;
//   3. stage buffers freed, then batched pruned inverses through an
//      f'-image scratch with bias and activation fused into the write.
// Spectra live in the permuted batched layout throughout.

template <class T>
LayerResult<T> conv_fft_staged(Tensor5<T> input, const ConvLayerParams<T>& params,
                               const LayerContext<T>& ctx) {
  params.validate(input.shape());
  const Shape5 in_sh = input.shape();
  const i64 S = in_sh.s, f = in_sh.f, fo = params.features_out();
  const vec3 n = in_sh.n, k = params.kernel_extents();
  const vec3 no = n - k + vec3{1, 1, 1};
  const vec3 padded = optimal_fft_sizes(n, ctx.profile);
  const auto bd = detail::batched_dims(f, n, padded);
  const auto kd = detail::batched_dims(f, k, padded);
  const auto od = detail::batched_dims(fo, no, padded);
  const i64 spec = bd.spectrum();
  const i64 inv_scratch = fo * no.x * bd.zh * padded.y;
  using Cx = std::complex<T>;

  detail::check_workspace(
      ctx.workspace, std::max({bd.scratch_complex(), kd.scratch_complex(), inv_scratch}),
      "conv_fft_staged");

  detail::Audit audit(ctx.cap_tracker);
  detail::AuditCharge input_charge(audit, input.size());

  detail::AuditCharge itf_charge(audit, 2 * S * f * spec);
  std::vector<Cx> itf(static_cast<std::size_t>(S * f * spec));
  detail::AuditCharge acc_charge(audit, 2 * S * fo * spec);
  std::vector<Cx> acc(static_cast<std::size_t>(S * fo * spec));
  {
    // f-image scratch shared by the batched transforms and the products
    detail::AuditCharge scratch_charge(audit, 2 * f * spec);
    std::vector<Cx> scratch(static_cast<std::size_t>(f * spec));

    // stage 1: transform inputs
    for (i64 s = 0; s < S; ++s)
      detail::batched_forward_into(input.image(s, 0), bd, itf.data() + s * f * spec,
                                   scratch.data(), ctx.workspace, ctx.fft());
    input.release();
    input_charge.reset();

    // stage 2: kernel transforms, products, fixed-order accumulation
    detail::AuditCharge ker_charge(audit, 2 * f * spec);
    std::vector<Cx> ker(static_cast<std::size_t>(f * spec));
    for (i64 i = 0; i < fo; ++i) {
      detail::batched_forward_into(params.kernels.image(i, 0), kd, ker.data(), scratch.data(),
                                   ctx.workspace, ctx.fft());
      for (i64 s = 0; s < S; ++s) {
        const Cx* t = itf.data() + s * f * spec;
        Cx* a = acc.data() + (s * fo + i) * spec;
        parallel_for(f * spec, ctx.workers, [&](i64 b, i64 e) {
          for (i64 v = b; v < e; ++v)
            scratch[static_cast<std::size_t>(v)] = t[v] * ker[static_cast<std::size_t>(v)];
        });
        parallel_for(spec, ctx.workers, [&](i64 b, i64 e) {
          for (i64 v = b; v < e; ++v) {
            Cx sum(0);
            for (i64 j = 0; j < f; ++j) sum += scratch[static_cast<std::size_t>(j * spec + v)];
            a[v] = sum;
          }
        });
      }
    }
  }
  itf_charge.reset();
  itf = std::vector<Cx>();

  // stage 3: inverse transforms with bias and activation fused
  Tensor5<T> out(Shape5{S, fo, no});
  detail::AuditCharge out_charge(audit, out.size());
  detail::AuditCharge s3_charge(audit, 2 * inv_scratch);
  std::vector<Cx> scratch3(static_cast<std::size_t>(inv_scratch));
  for (i64 s = 0; s < S; ++s) {
    detail::batched_inverse_region(
        acc.data() + s * fo * spec, od, k - vec3{1, 1, 1}, no, out.image(s, 0), scratch3.data(),
        ctx.workspace, ctx.fft(), [&](i64 img, T v) {
          return detail::activate(v + params.bias[static_cast<std::size_t>(img)], params.act);
        });
  }

  ResourceEnv env;
  env.workers = static_cast<double>(ctx.workers);
  const double model = layer_memory(PrimitiveKind::fft_staged, static_cast<double>(S),
                                    static_cast<double>(f), static_cast<double>(fo),
                                    static_cast<double>(n.elements()),
                                    static_cast<double>(no.elements()),
                                    transformed_real_elements(n, ctx.profile), env);
  return {std::move(out), MemoryAudit{static_cast<double>(audit.peak()), model}};
}

// ---- pooling ---------------------------------------------------------------

// Plain max pooling: extents must divide by the window.
template <class T>
LayerResult<T> max_pool(Tensor5<T> input, vec3 p, const LayerContext<T>& ctx) {
  const Shape5 sh = input.shape();
  require(p.all_positive(), "max_pool: window extents must be positive");
  require(sh.n.x % p.x == 0 && sh.n.y % p.y == 0 && sh.n.z % p.z == 0,
          "max_pool: extents must be divisible by the window");
  detail::check_no_nan(input, "max_pool");
  const vec3 no{sh.n.x / p.x, sh.n.y / p.y, sh.n.z / p.z};

  detail::Audit audit(ctx.cap_tracker);
  detail::AuditCharge input_charge(audit, input.size());
  Tensor5<T> out(Shape5{sh.s, sh.f, no});
  detail::AuditCharge out_charge(audit, out.size());

  parallel_for(sh.s * sh.f, ctx.workers, [&](i64 b, i64 e) {
    for (i64 l = b; l < e; ++l) {
      const T* in = input.data() + l * sh.n.elements();
      T* o = out.data() + l * no.elements();
      for (i64 x = 0; x < no.x; ++x)
        for (i64 y = 0; y < no.y; ++y)
          for (i64 z = 0; z < no.z; ++z) {
            T m = in[((x * p.x) * sh.n.y + y * p.y) * sh.n.z + z * p.z];
            for (i64 qx = 0; qx < p.x; ++qx)
              for (i64 qy = 0; qy < p.y; ++qy)
                for (i64 qz = 0; qz < p.z; ++qz) {
                  const T v = in[((x * p.x + qx) * sh.n.y + y * p.y + qy) * sh.n.z + z * p.z + qz];
                  if (v > m) m = v;
                }
            o[(x * no.y + y) * no.z + z] = m;
          }
    }
  });

  input.release();
  input_charge.reset();
  ResourceEnv env;
  const double model = layer_memory(PrimitiveKind::pool_plain, static_cast<double>(sh.s),
                                    static_cast<double>(sh.f), static_cast<double>(sh.f),
                                    static_cast<double>(sh.n.elements()),
                                    static_cast<double>(no.elements()), 0, env);
  return {std::move(out), MemoryAudit{static_cast<double>(audit.peak()), model}};
}

// Max-pooling fragments: one output batch entry per window offset, ordered
// lexicographically by offset with all fragments of one input contiguous.
// Requires extent+1 divisible by the window; each fragment has extents
// floor(n/p).
template <class T>
LayerResult<T> mpf_pool(Tensor5<T> input, vec3 p, const LayerContext<T>& ctx) {
  const Shape5 sh = input.shape();
  require(p.all_positive(), "mpf_pool: window extents must be positive");
  require((sh.n.x + 1) % p.x == 0 && (sh.n.y + 1) % p.y == 0 && (sh.n.z + 1) % p.z == 0,
          "mpf_pool: extent+1 must be divisible by the window");
  detail::check_no_nan(input, "mpf_pool");
  const vec3 no{sh.n.x / p.x, sh.n.y / p.y, sh.n.z / p.z};
  const i64 frags = p.elements();

  detail::Audit audit(ctx.cap_tracker);
  detail::AuditCharge input_charge(audit, input.size());
  Tensor5<T> out(Shape5{sh.s * frags, sh.f, no});
  detail::AuditCharge out_charge(audit, out.size());

  parallel_for(sh.s * frags * sh.f, ctx.workers, [&](i64 b, i64 e) {
    for (i64 l = b; l < e; ++l) {
      const i64 fmap = l % sh.f;
      const i64 batch = l / sh.f;
      const i64 s = batch / frags, off = batch % frags;
      const i64 ox = off / (p.y * p.z), oy = (off / p.z) % p.y, oz = off % p.z;
      const T* in = input.image(s, fmap);
      T* o = out.image(batch, fmap);
      for (i64 x = 0; x < no.x; ++x)
        for (i64 y = 0; y < no.y; ++y)
          for (i64 z = 0; z < no.z; ++z) {
            T m = in[((ox + x * p.x) * sh.n.y + oy + y * p.y) * sh.n.z + oz + z * p.z];
            for (i64 qx = 0; qx < p.x; ++qx)
              for (i64 qy = 0; qy < p.y; ++qy)
                for (i64 qz = 0; qz < p.z; ++qz) {
                  const T v = in[((ox + x * p.x + qx) * sh.n.y + oy + y * p.y + qy) * sh.n.z + oz +
                                 z * p.z + qz];
                  if (v > m) m = v;
                }
            o[(x * no.y + y) * no.z + z] = m;
          }
    }
  });

  input.release();
  input_charge.reset();
  ResourceEnv env;
  const double model = layer_memory(PrimitiveKind::pool_fragments, static_cast<double>(sh.s),
                                    static_cast<double>(sh.f), static_cast<double>(sh.f),
                                    static_cast<double>(sh.n.elements()),
                                    static_cast<double>(frags * no.elements()), 0, env);
  return {std::move(out), MemoryAudit{static_cast<double>(audit.peak()), model}};
}

// Interleaves the fragments produced by the given fragment-pooling windows
// (network order) back into a dense sliding-window output.  `fragments` has
// batch original_batch * prod(|windows|); the result has the original batch
// and per-axis extents prod(windows) * fragment extent.
template <class T>
Tensor5<T> recombine_fragments(const Tensor5<T>& fragments, const std::vector<vec3>& windows,
                               i64 original_batch) {
  const Shape5 sh = fragments.shape();
  i64 alpha = 1;
  vec3 stride{1, 1, 1};
  for (const vec3& w : windows) {
    require(w.all_positive(), "recombine_fragments: bad window");
    alpha *= w.elements();
    stride = stride * w;
  }
  require(original_batch > 0 && sh.s == original_batch * alpha,
          "recombine_fragments: fragment batch mismatch");

  const vec3 dense = stride * sh.n;
  Tensor5<T> out(Shape5{original_batch, sh.f, dense});

  for (i64 b = 0; b < sh.s; ++b) {
    // decompose the fragment index into per-layer offsets; the first window's
    // offset varies slowest, matching how the pools multiplied the batch
    i64 rest = b % alpha;
    const i64 s = b / alpha;
    vec3 offset{0, 0, 0};
    i64 scale = alpha;
    vec3 pre{1, 1, 1};  // cumulative stride before each window layer
    for (const vec3& w : windows) {
      scale /= w.elements();
      const i64 idx = rest / scale;
      rest %= scale;
      const i64 ox = idx / (w.y * w.z), oy = (idx / w.z) % w.y, oz = idx % w.z;
      offset = offset + vec3{ox * pre.x, oy * pre.y, oz * pre.z};
      pre = pre * w;
    }
    for (i64 fm = 0; fm < sh.f; ++fm) {
      const T* src = fragments.image(b, fm);
      T* dst = out.image(s, fm);
      for (i64 x = 0; x < sh.n.x; ++x)
        for (i64 y = 0; y < sh.n.y; ++y)
          for (i64 z = 0; z < sh.n.z; ++z)
            dst[((offset.x + x * stride.x) * dense.y + offset.y + y * stride.y) * dense.z +
                offset.z + z * stride.z] = src[(x * sh.n.y + y) * sh.n.z + z];
    }
  }
  return out;
}

}  // namespace vx
