#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <random>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "voxin/layers.hpp"
#include "voxin/network.hpp"
#include "voxin/planner.hpp"
#include "voxin/task_conv.hpp"

namespace vx {

// Weights of a whole network: one parameter set per convolutional layer, in
// network order.
template <class T>
struct NetworkWeights {
  std::vector<ConvLayerParams<T>> convs;

  void validate(const NetworkSpec& net) const {
    require(static_cast<i64>(convs.size()) == net.conv_count(),
            "NetworkWeights: one parameter set per convolutional layer required");
    i64 f = net.features_in;
    std::size_t c = 0;
    for (const LayerSpec& layer : net.layers) {
      const auto* conv = std::get_if<ConvSpec>(&layer);
      if (!conv) continue;
      const ConvLayerParams<T>& p = convs[c++];
      require(p.features_in() == f && p.features_out() == conv->features_out &&
                  p.kernel_extents() == conv->kernel && p.act == conv->act,
              "NetworkWeights: parameter shape does not match the layer");
      f = conv->features_out;
    }
  }
};

// Deterministic random weights: kernel entries uniform in +-sqrt(3 / fan-in)
// (unit input variance), biases uniform in +-0.1.
template <class T>
NetworkWeights<T> random_weights(const NetworkSpec& net, std::uint64_t seed) {
  net.validate();
  NetworkWeights<T> w;
  std::mt19937_64 rng(seed);
  i64 f = net.features_in;
  for (const LayerSpec& layer : net.layers) {
    const auto* conv = std::get_if<ConvSpec>(&layer);
    if (!conv) continue;
    ConvLayerParams<T> p;
    p.kernels = Tensor5<T>(Shape5{conv->features_out, f, conv->kernel});
    const double bound =
        std::sqrt(3.0 / (static_cast<double>(f) * static_cast<double>(conv->kernel.elements())));
    std::uniform_real_distribution<double> kd(-bound, bound);
    std::uniform_real_distribution<double> bd(-0.1, 0.1);
    T* kp = p.kernels.data();
    for (i64 i = 0, nk = p.kernels.size(); i < nk; ++i) kp[i] = static_cast<T>(kd(rng));
    p.bias.resize(static_cast<std::size_t>(conv->features_out));
    for (T& b : p.bias) b = static_cast<T>(bd(rng));
    p.act = conv->act;
    w.convs.push_back(std::move(p));
    f = conv->features_out;
  }
  return w;
}

// Measured outcome of one executed plan.
struct ThroughputReport {
  double voxels = 0;                  // recombined dense output voxels, batch included
  double seconds = 0;                 // wall time, plus modeled transfer delays unless slept out
  double voxels_per_second = 0;       // voxels / seconds
  std::vector<double> layer_seconds;  // aligned with the network's layers
  double transfer_seconds = 0;        // transfer share of the run (modeled either way)
  double host_peak = 0;               // audited peak working set, scalars
  double device_peak = 0;
};

// Knobs of a real run.  The transform workspace default is deliberately
// generous: a plan's memory budgets are enforced through the audited trackers,
// not by starving transform scratch.
template <class T>
struct ExecutionEnv {
  i64 workers = 1;
  const DftEngine<T>* engine = &fast_dft_engine<T>();
  FftWorkspace workspace{i64(1) << 50, 64};
  RadixProfile host_profile = RadixProfile::host_default();
  std::optional<i64> host_capacity;   // scalars; enforced when set
  std::optional<DeviceModel> device;  // required when the plan touches the device
  bool real_transfer_sleep = false;   // sleep out transfer delays (end-to-end timing runs)
};

namespace detail {

using ExecClock = std::chrono::steady_clock;

inline double seconds_between(ExecClock::time_point a, ExecClock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

// Per-run time bookkeeping; prefix and suffix keep separate instances so the
// pipeline's two workers never share one.
struct RunTimes {
  std::vector<double> layer_seconds;
  double transfer_seconds = 0;

  explicit RunTimes(std::size_t layers) : layer_seconds(layers, 0.0) {}
};

// Executes one plan: the prefix [0, theta) one layer at a time (host
// primitives, or slice-wise on the device executor), the suffix [theta, L)
// chunk-at-a-time on the device.  The device executor is host computation
// behind the device memory cap; transfers are charged as modeled delays or
// slept out for real.
template <class T>
class PlanRunner {
 public:
  PlanRunner(const ExecutionPlan& plan, const NetworkSpec& net, const NetworkWeights<T>& weights,
             const ExecutionEnv<T>& env)
      : plan_(plan),
        net_(net),
        weights_(weights),
        env_(env),
        host_tracker_(env.host_capacity ? *env.host_capacity : i64(-1)),
        device_tracker_(device_cap(env)) {
    require(env.workers >= 1, "execute: at least one worker required");
    net.validate();
    weights.validate(net);
    require(plan.layers.size() == net.layers.size(), "execute: plan does not match the network");
    const i64 L = static_cast<i64>(net.layers.size());
    require(plan.theta >= 0 && plan.theta <= L, "execute: split index out of range");
    const bool needs_device =
        plan.theta < L || std::any_of(plan.layers.begin(), plan.layers.end(),
                                      [](const LayerPlan& l) { return l.on_device; });
    require(!needs_device || env.device.has_value(), "execute: plan requires a device model");
    if (env.device) env.device->validate();

    conv_at_.assign(net.layers.size(), -1);
    i64 c = 0;
    for (std::size_t i = 0; i < net.layers.size(); ++i)
      if (std::holds_alternative<ConvSpec>(net.layers[i])) conv_at_[i] = c++;

    chain_ = propagate_shapes(net, plan.input, pool_modes());
    require(chain_.ok(), "execute: plan input does not propagate through the network");
  }

  // Pool modes implied by the plan's per-layer primitive choices.
  std::vector<PoolMode> pool_modes() const {
    std::vector<PoolMode> modes;
    for (std::size_t i = 0; i < net_.layers.size(); ++i) {
      if (!std::holds_alternative<PoolSpec>(net_.layers[i])) continue;
      const PrimitiveKind kind = plan_.layers[i].kind;
      require(is_pool_kind(kind), "execute: plan assigns a non-pooling primitive to a pool layer");
      modes.push_back(kind == PrimitiveKind::pool_fragments ? PoolMode::fragments
                                                            : PoolMode::plain);
    }
    return modes;
  }

  Tensor5<T> run_prefix(Tensor5<T> x, RunTimes& t) {
    for (i64 li = 0; li < plan_.theta; ++li) {
      const auto start = ExecClock::now();
      const LayerPlan& lp = plan_.layers[li];
      if (std::holds_alternative<ConvSpec>(net_.layers[li])) {
        const ConvLayerParams<T>& p = weights_.convs[static_cast<std::size_t>(conv_at_[li])];
        x = lp.on_device ? offloaded_conv(std::move(x), p, lp, li, t)
                         : host_conv(std::move(x), p, lp.kind);
      } else {
        // pooling always runs host-side in the layer-at-a-time segment
        x = pool(std::move(x), std::get<PoolSpec>(net_.layers[li]), lp.kind, false);
      }
      t.layer_seconds[static_cast<std::size_t>(li)] += seconds_between(start, ExecClock::now());
    }
    return x;
  }

  Tensor5<T> run_suffix(Tensor5<T> x, RunTimes& t) {
    const i64 L = static_cast<i64>(net_.layers.size());
    if (plan_.theta >= L) return x;
    const Shape5 in_sh = x.shape();
    const Shape5 fin_sh = chain_.shapes.back();
    const i64 alpha = fin_sh.s / in_sh.s;  // batch growth across the suffix
    Tensor5<T> out(fin_sh);
    // the host stages the suffix input and the network output throughout
    ScopedCharge staging(&host_tracker_, x.size() + out.size());

    const i64 sb = std::max<i64>(1, plan_.device_sub_batch);
    for (i64 s0 = 0; s0 < in_sh.s; s0 += sb) {
      const i64 sn = std::min(sb, in_sh.s - s0);
      Tensor5<T> cur(Shape5{sn, in_sh.f, in_sh.n});
      std::copy(x.image(s0, 0), x.image(s0, 0) + cur.size(), cur.data());
      for (i64 li = plan_.theta; li < L; ++li) {
        const auto start = ExecClock::now();
        if (li == plan_.theta) transfer(static_cast<double>(cur.size()), li, t);  // chunk up
        const LayerPlan& lp = plan_.layers[li];
        if (std::holds_alternative<ConvSpec>(net_.layers[li])) {
          const ConvLayerParams<T>& p = weights_.convs[static_cast<std::size_t>(conv_at_[li])];
          cur = device_conv(std::move(cur), p, lp.kind);
        } else {
          cur = pool(std::move(cur), std::get<PoolSpec>(net_.layers[li]), lp.kind, true);
        }
        if (li == L - 1) transfer(static_cast<double>(cur.size()), li, t);  // chunk down
        t.layer_seconds[static_cast<std::size_t>(li)] += seconds_between(start, ExecClock::now());
      }
      // fragments of one input stay contiguous, so chunk outputs concatenate
      std::copy(cur.data(), cur.data() + cur.size(), out.image(s0 * alpha, 0));
    }
    return out;
  }

  // Interleaves all fragment-pool outputs back into the dense batch.
  Tensor5<T> recombine(Tensor5<T> x) const {
    std::vector<vec3> windows;
    for (std::size_t i = 0; i < net_.layers.size(); ++i)
      if (const auto* p = std::get_if<PoolSpec>(&net_.layers[i]))
        if (plan_.layers[i].kind == PrimitiveKind::pool_fragments) windows.push_back(p->window);
    if (windows.empty()) return x;
    return recombine_fragments(x, windows, plan_.input.s);
  }

  ThroughputReport report(const RunTimes& t, double wall_seconds, double items) const {
    const Shape5& fin = chain_.shapes.back();
    ThroughputReport r;
    r.voxels = items * static_cast<double>(fin.s) * static_cast<double>(fin.voxels());
    r.layer_seconds = t.layer_seconds;
    r.transfer_seconds = t.transfer_seconds;
    r.seconds = wall_seconds + (env_.real_transfer_sleep ? 0.0 : t.transfer_seconds);
    r.voxels_per_second = r.voxels / r.seconds;
    r.host_peak = static_cast<double>(host_tracker_.peak());
    r.device_peak = static_cast<double>(device_tracker_.peak());
    return r;
  }

  std::size_t layer_count() const { return net_.layers.size(); }

 private:
  static i64 device_cap(const ExecutionEnv<T>& env) {
    if (!env.device || !std::isfinite(env.device->env.capacity)) return -1;
    return static_cast<i64>(env.device->env.capacity);
  }

  LayerContext<T> host_ctx() {
    LayerContext<T> ctx;
    ctx.workers = env_.workers;
    ctx.engine = env_.engine;
    ctx.profile = env_.host_profile;
    ctx.workspace = env_.workspace;
    ctx.cap_tracker = &host_tracker_;
    return ctx;
  }

  LayerContext<T> device_ctx() {
    LayerContext<T> ctx;
    ctx.workers = env_.workers;
    ctx.engine = env_.engine;
    ctx.profile = env_.device ? env_.device->profile : RadixProfile::device_default();
    ctx.workspace = env_.workspace;
    ctx.cap_tracker = &device_tracker_;
    return ctx;
  }

  // Charges one transfer: a modeled delay added to the layer's time, or a real
  // sleep inside the layer's timed window.
  void transfer(double scalars, i64 layer, RunTimes& t) {
    if (scalars <= 0 || !env_.device) return;
    const double s = scalars / env_.device->transfer_rate;
    t.transfer_seconds += s;
    if (env_.real_transfer_sleep)
      std::this_thread::sleep_for(std::chrono::duration<double>(s));
    else
      t.layer_seconds[static_cast<std::size_t>(layer)] += s;
  }

  Tensor5<T> host_conv(Tensor5<T> in, const ConvLayerParams<T>& p, PrimitiveKind kind) {
    LayerContext<T> ctx = host_ctx();
    switch (kind) {
      case PrimitiveKind::direct_naive:
        return conv_direct(std::move(in), p, ctx, DirectVariant::naive).output;
      case PrimitiveKind::direct_temp:
        return conv_direct(std::move(in), p, ctx, DirectVariant::temp_buffer).output;
      case PrimitiveKind::fft_data_parallel:
        return conv_fft_data_parallel(std::move(in), p, ctx).output;
      case PrimitiveKind::fft_task_parallel:
        return conv_fft_task_parallel(std::move(in), p, ctx).output;
      case PrimitiveKind::fft_staged:
        return conv_fft_staged(std::move(in), p, ctx).output;
      default:
        throw std::invalid_argument("execute: not a host convolution primitive");
    }
  }

  Tensor5<T> device_conv(Tensor5<T> in, const ConvLayerParams<T>& p, PrimitiveKind kind) {
    LayerContext<T> ctx = device_ctx();
    switch (kind) {
      case PrimitiveKind::device_direct_default:
      case PrimitiveKind::device_direct_precomp:
        return conv_direct(std::move(in), p, ctx, DirectVariant::naive).output;
      case PrimitiveKind::device_fft:
        return conv_fft_staged(std::move(in), p, ctx).output;
      default:
        throw std::invalid_argument("execute: not a device convolution primitive");
    }
  }

  Tensor5<T> pool(Tensor5<T> in, const PoolSpec& spec, PrimitiveKind kind, bool on_device) {
    LayerContext<T> ctx = on_device ? device_ctx() : host_ctx();
    if (kind == PrimitiveKind::pool_fragments) return mpf_pool(std::move(in), spec.window, ctx).output;
    require(kind == PrimitiveKind::pool_plain, "execute: not a pooling primitive");
    return max_pool(std::move(in), spec.window, ctx).output;
  }

  // A prefix convolution decomposed onto the device: each division's input and
  // kernel slices run bias-free, partial products accumulate on the host, and
  // bias plus activation are applied once after every feature block landed.
  Tensor5<T> offloaded_conv(Tensor5<T> input, const ConvLayerParams<T>& params,
                            const LayerPlan& lp, i64 layer, RunTimes& t) {
    require(!lp.divisions.empty(), "execute: device-resident layer without divisions");
    const Shape5 in_sh = input.shape();
    const vec3 k = params.kernel_extents();
    const vec3 no = in_sh.n - k + vec3{1, 1, 1};
    const i64 fo = params.features_out();
    const i64 nel = in_sh.n.elements(), oel = no.elements(), kel = k.elements();
    Tensor5<T> out(Shape5{in_sh.s, fo, no});
    // the host stages the full input and output while the device works slices
    ScopedCharge staging(&host_tracker_, input.size() + out.size());

    for (const SubDivision& d : lp.divisions) {
      Tensor5<T> slice(Shape5{d.s_n, d.f_n, in_sh.n});
      for (i64 s = 0; s < d.s_n; ++s)
        for (i64 j = 0; j < d.f_n; ++j) {
          const T* src = input.image(d.s0 + s, d.f0 + j);
          std::copy(src, src + nel, slice.image(s, j));
        }
      ConvLayerParams<T> part;
      part.kernels = Tensor5<T>(Shape5{d.o_n, d.f_n, k});
      for (i64 o = 0; o < d.o_n; ++o)
        for (i64 j = 0; j < d.f_n; ++j) {
          const T* src = params.kernels.image(d.o0 + o, d.f0 + j);
          std::copy(src, src + kel, part.kernels.image(o, j));
        }
      part.bias.assign(static_cast<std::size_t>(d.o_n), T(0));
      part.act = Activation::identity;

      transfer(static_cast<double>(d.s_n) * (static_cast<double>(d.f_n * nel) +
                                             static_cast<double>(d.o_n * oel)),
               layer, t);
      Tensor5<T> piece = device_conv(std::move(slice), part, lp.kind);
      for (i64 s = 0; s < d.s_n; ++s)
        for (i64 o = 0; o < d.o_n; ++o) {
          const T* src = piece.image(s, o);
          T* dst = out.image(d.s0 + s, d.o0 + o);
          for (i64 v = 0; v < oel; ++v) dst[v] += src[v];
        }
    }

    for (i64 s = 0; s < in_sh.s; ++s)
      for (i64 o = 0; o < fo; ++o) {
        T* dst = out.image(s, o);
        const T b = params.bias[static_cast<std::size_t>(o)];
        for (i64 v = 0; v < oel; ++v) dst[v] = activate(dst[v] + b, params.act);
      }
    return out;
  }

  const ExecutionPlan& plan_;
  const NetworkSpec& net_;
  const NetworkWeights<T>& weights_;
  const ExecutionEnv<T>& env_;
  MemoryTracker host_tracker_;
  MemoryTracker device_tracker_;
  std::vector<i64> conv_at_;
  ShapeChain chain_;
};

}  // namespace detail

// Runs a plan over one input and reports the measured throughput.  The dense
// output is independent of the plan: any feasible plan for the same network,
// weights, and input produces the same sliding-window result.
template <class T>
std::pair<Tensor5<T>, ThroughputReport> execute_plan(const ExecutionPlan& plan,
                                                     const NetworkSpec& net,
                                                     const NetworkWeights<T>& weights,
                                                     Tensor5<T> input,
                                                     const ExecutionEnv<T>& env) {
  detail::PlanRunner<T> runner(plan, net, weights, env);
  require(input.shape() == plan.input, "execute: input does not match the plan");
  detail::RunTimes t(runner.layer_count());
  const auto start = detail::ExecClock::now();
  Tensor5<T> x = runner.run_prefix(std::move(input), t);
  x = runner.run_suffix(std::move(x), t);
  Tensor5<T> dense = runner.recombine(std::move(x));
  const double wall = detail::seconds_between(start, detail::ExecClock::now());
  return {std::move(dense), runner.report(t, wall, 1.0)};
}

// Runs a plan over a stream of same-shaped inputs, one full pass per item.
template <class T>
std::pair<std::vector<Tensor5<T>>, ThroughputReport> serial_execute(
    const ExecutionPlan& plan, const NetworkSpec& net, const NetworkWeights<T>& weights,
    std::vector<Tensor5<T>> items, const ExecutionEnv<T>& env) {
  require(!items.empty(), "serial_execute: at least one input required");
  std::vector<Tensor5<T>> outputs;
  outputs.reserve(items.size());
  ThroughputReport total;
  total.layer_seconds.assign(net.layers.size(), 0.0);
  for (Tensor5<T>& item : items) {
    auto [out, rep] = execute_plan(plan, net, weights, std::move(item), env);
    outputs.push_back(std::move(out));
    total.voxels += rep.voxels;
    total.seconds += rep.seconds;
    total.transfer_seconds += rep.transfer_seconds;
    for (std::size_t i = 0; i < rep.layer_seconds.size(); ++i)
      total.layer_seconds[i] += rep.layer_seconds[i];
    total.host_peak = std::max(total.host_peak, rep.host_peak);
    total.device_peak = std::max(total.device_peak, rep.device_peak);
  }
  total.voxels_per_second = total.voxels / total.seconds;
  return {std::move(outputs), total};
}

// Producer-consumer execution of a split plan over a stream of inputs: one
// worker computes prefixes, the other suffixes, joined by a capacity-one
// handoff, so the producer may not start item i+1 until item i was taken.
// In steady state the period approaches max(prefix time, suffix time).
// Without real transfer sleeps the modeled transfer delays are added to the
// measured span, a deliberately conservative serialization.
template <class T>
std::pair<std::vector<Tensor5<T>>, ThroughputReport> pipeline_execute(
    const ExecutionPlan& plan, const NetworkSpec& net, const NetworkWeights<T>& weights,
    std::vector<Tensor5<T>> items, const ExecutionEnv<T>& env) {
  detail::PlanRunner<T> runner(plan, net, weights, env);
  require(!items.empty(), "pipeline_execute: at least one input required");
  for (const Tensor5<T>& item : items)
    require(item.shape() == plan.input, "execute: input does not match the plan");

  detail::RunTimes host_t(runner.layer_count()), dev_t(runner.layer_count());
  std::vector<Tensor5<T>> outputs(items.size());

  std::mutex mu;
  std::condition_variable cv;
  std::optional<Tensor5<T>> slot;
  bool consumer_stopped = false;
  std::exception_ptr producer_err = nullptr;

  const auto start = detail::ExecClock::now();
  std::thread producer([&] {
    try {
      for (std::size_t i = 0; i < items.size(); ++i) {
        Tensor5<T> mid = runner.run_prefix(std::move(items[i]), host_t);
        std::unique_lock<std::mutex> lk(mu);
        cv.wait(lk, [&] { return !slot.has_value() || consumer_stopped; });
        if (consumer_stopped) return;
        slot = std::move(mid);
        cv.notify_all();
      }
    } catch (...) {
      std::lock_guard<std::mutex> lk(mu);
      producer_err = std::current_exception();
      cv.notify_all();
    }
  });

  std::exception_ptr consumer_err = nullptr;
  for (std::size_t i = 0; i < items.size() && !consumer_err; ++i) {
    Tensor5<T> mid;
    {
      std::unique_lock<std::mutex> lk(mu);
      cv.wait(lk, [&] { return slot.has_value() || producer_err; });
      if (producer_err) break;
      mid = std::move(*slot);
      slot.reset();
      cv.notify_all();
    }
    try {
      outputs[i] = runner.recombine(runner.run_suffix(std::move(mid), dev_t));
    } catch (...) {
      consumer_err = std::current_exception();
    }
  }
  {
    std::lock_guard<std::mutex> lk(mu);
    consumer_stopped = true;
    cv.notify_all();
  }
  producer.join();
  if (producer_err) std::rethrow_exception(producer_err);
  if (consumer_err) std::rethrow_exception(consumer_err);
  const double wall = detail::seconds_between(start, detail::ExecClock::now());

  detail::RunTimes merged(runner.layer_count());
  for (std::size_t i = 0; i < merged.layer_seconds.size(); ++i)
    merged.layer_seconds[i] = host_t.layer_seconds[i] + dev_t.layer_seconds[i];
  merged.transfer_seconds = host_t.transfer_seconds + dev_t.transfer_seconds;
  return {std::move(outputs), runner.report(merged, wall, static_cast<double>(items.size()))};
}

// Measurement protocol: one warm-up run, then five timed runs; the run with
// the median wall time is the one reported.
template <class T>
ThroughputReport measure_throughput(const ExecutionPlan& plan, const NetworkSpec& net,
                                    const NetworkWeights<T>& weights, const Tensor5<T>& input,
                                    const ExecutionEnv<T>& env) {
  (void)execute_plan(plan, net, weights, Tensor5<T>(input), env);
  std::vector<ThroughputReport> runs;
  runs.reserve(5);
  for (int i = 0; i < 5; ++i)
    runs.push_back(execute_plan(plan, net, weights, Tensor5<T>(input), env).second);
  std::sort(runs.begin(), runs.end(),
            [](const ThroughputReport& a, const ThroughputReport& b) { return a.seconds < b.seconds; });
  return runs[2];
}

}  // namespace vx
