#include "voxin/planner.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <utility>
#include <variant>

namespace vx {
namespace {

constexpr vec3 kUnit{1, 1, 1};

i64 ceil_div(i64 a, i64 b) { return (a + b - 1) / b; }

// Per-axis bound below which the direct device kinds apply; larger kernels go
// through the transform kind.
bool small_kernel(vec3 k) { return k.x <= 5 && k.y <= 5 && k.z <= 5; }

bool is_direct(PrimitiveKind k) {
  return k == PrimitiveKind::direct_naive || k == PrimitiveKind::direct_temp ||
         k == PrimitiveKind::device_direct_default || k == PrimitiveKind::device_direct_precomp;
}

// Geometry of one layer instance: the shapes entering and leaving it.
struct Instance {
  Shape5 in, out;
};

Shape5 conv_output(const Shape5& in, const ConvSpec& conv) {
  return {in.s, conv.features_out, in.n - conv.kernel + kUnit};
}

double conv_kind_flops(PrimitiveKind kind, const Instance& io, vec3 kernel, double fft_c) {
  if (is_direct(kind))
    return conv_direct_flops_general(double(io.in.s), double(io.in.f), double(io.out.f), io.in.n,
                                     kernel);
  return conv_fft_flops_general(double(io.in.s), double(io.in.f), double(io.out.f), io.in.n,
                                kernel, fft_c);
}

double conv_kind_memory(PrimitiveKind kind, const Instance& io, const RadixProfile& profile,
                        const ResourceEnv& env) {
  const double ntilde = is_direct(kind) ? 0.0 : transformed_real_elements(io.in.n, profile);
  return layer_memory(kind, double(io.in.s), double(io.in.f), double(io.out.f),
                      double(io.in.voxels()), double(io.out.voxels()), ntilde, env);
}

// Output elements per input image; for fragment pooling that spans every
// fragment produced from one image.
double pool_out_per_image(const Instance& io) {
  return double(io.out.s / io.in.s) * double(io.out.voxels());
}

double pool_kind_memory(PrimitiveKind kind, const Instance& io, const ResourceEnv& env) {
  return layer_memory(kind, double(io.in.s), double(io.in.f), double(io.in.f),
                      double(io.in.voxels()), pool_out_per_image(io), 0.0, env);
}

PrimitiveKind pool_kind_of(PoolMode mode) {
  return mode == PoolMode::plain ? PrimitiveKind::pool_plain : PrimitiveKind::pool_fragments;
}

constexpr PrimitiveKind kHostConvKinds[] = {
    PrimitiveKind::direct_naive, PrimitiveKind::direct_temp, PrimitiveKind::fft_data_parallel,
    PrimitiveKind::fft_task_parallel, PrimitiveKind::fft_staged};

// Cheapest host realization of one conv instance that fits host memory:
// minimal modeled seconds, then minimal working set, then declaration order.
std::optional<LayerPlan> best_host_conv(const Instance& io, const ConvSpec& conv,
                                        const HostModel& host) {
  std::optional<LayerPlan> best;
  for (PrimitiveKind kind : kHostConvKinds) {
    const double mem = conv_kind_memory(kind, io, host.profile, host.env);
    if (mem > host.env.capacity) continue;
    const double secs = conv_kind_flops(kind, io, conv.kernel, host.fft_c) / host.flop_rate;
    if (!best || secs < best->seconds || (secs == best->seconds && mem < best->memory)) {
      LayerPlan lp;
      lp.kind = kind;
      lp.seconds = secs;
      lp.memory = mem;
      best = lp;
    }
  }
  return best;
}

std::vector<PrimitiveKind> device_conv_kinds(vec3 kernel) {
  if (small_kernel(kernel))
    return {PrimitiveKind::device_direct_default, PrimitiveKind::device_direct_precomp};
  return {PrimitiveKind::device_fft};
}

double device_kind_rate(PrimitiveKind kind, const DeviceModel& device) {
  return is_direct(kind) ? device.direct_rate() : device.flop_rate;
}

// Contiguous blocks of `block` entries covering [0, total), the last one
// possibly smaller.
std::vector<std::pair<i64, i64>> split_uniform(i64 total, i64 block) {
  std::vector<std::pair<i64, i64>> spans;
  for (i64 a = 0; a < total; a += block) spans.push_back({a, std::min(block, total - a)});
  return spans;
}

struct LadderResult {
  std::vector<SubDivision> divisions;
  double compute = 0, transfer = 0, memory = 0;
  bool ok = false;
};

// Decomposition ladder for one device kind: whole layer if it fits, then
// whole-feature sub-batches, then single-entry slices with uniform feature
// blocks chosen for cheapest modeled compute + transfer.
LadderResult run_ladder(PrimitiveKind kind, const Instance& io, vec3 kernel,
                        const DeviceModel& device) {
  const double cap = device.env.capacity;
  const double rate = device_kind_rate(kind, device);
  const double n_el = double(io.in.voxels());
  const double out_el = double(io.out.voxels());
  const i64 S = io.in.s, F = io.in.f, O = io.out.f;

  auto slice_mem = [&](i64 s, i64 f, i64 o) {
    const Instance sub{Shape5{s, f, io.in.n}, Shape5{s, o, io.out.n}};
    return conv_kind_memory(kind, sub, device.profile, device.env);
  };
  auto slice_compute = [&](i64 s, i64 f, i64 o) {
    const Instance sub{Shape5{s, f, io.in.n}, Shape5{s, o, io.out.n}};
    return conv_kind_flops(kind, sub, kernel, device.fft_c) / rate;
  };
  auto slice_transfer = [&](i64 s, i64 f, i64 o) {
    return double(s) * (double(f) * n_el + double(o) * out_el) / device.transfer_rate;
  };

  LadderResult r;
  auto finish = [&](std::vector<SubDivision> divs) {
    for (const SubDivision& d : divs) {
      r.compute += slice_compute(d.s_n, d.f_n, d.o_n);
      r.transfer += slice_transfer(d.s_n, d.f_n, d.o_n);
      r.memory = std::max(r.memory, slice_mem(d.s_n, d.f_n, d.o_n));
    }
    r.divisions = std::move(divs);
    r.ok = true;
  };

  if (slice_mem(S, F, O) <= cap) {
    finish({SubDivision{0, S, 0, F, 0, O}});
    return r;
  }

  if (S > 1 && slice_mem(1, F, O) <= cap) {
    i64 sb = S - 1;
    while (sb > 1 && slice_mem(sb, F, O) > cap) --sb;
    std::vector<SubDivision> divs;
    for (const auto& span : split_uniform(S, sb))
      divs.push_back({span.first, span.second, 0, F, 0, O});
    finish(std::move(divs));
    return r;
  }

  // Candidate uniform block sizes are the distinct ceilings of an equal split.
  std::set<i64> f_sizes, o_sizes;
  for (i64 parts = 1; parts <= F; ++parts) f_sizes.insert(ceil_div(F, parts));
  for (i64 parts = 1; parts <= O; ++parts) o_sizes.insert(ceil_div(O, parts));

  struct Cand {
    double seconds = 0, memory = 0;
    i64 blocks = 0, bf = 0, bo = 0;
  };
  std::optional<Cand> best;
  for (i64 bf : f_sizes) {
    for (i64 bo : o_sizes) {
      const double mem = slice_mem(1, bf, bo);
      if (mem > cap) continue;
      const auto fb = split_uniform(F, bf);
      const auto ob = split_uniform(O, bo);
      double secs = 0;
      for (const auto& fs : fb)
        for (const auto& os : ob)
          secs += slice_compute(1, fs.second, os.second) + slice_transfer(1, fs.second, os.second);
      secs *= double(S);
      const i64 blocks = i64(fb.size()) * i64(ob.size());
      const bool wins =
          !best || secs < best->seconds ||
          (secs == best->seconds &&
           (mem < best->memory ||
            (mem == best->memory &&
             (blocks < best->blocks ||
              (blocks == best->blocks && (bf > best->bf || (bf == best->bf && bo > best->bo)))))));
      if (wins) best = Cand{secs, mem, blocks, bf, bo};
    }
  }
  if (!best) return r;

  const auto fb = split_uniform(F, best->bf);
  const auto ob = split_uniform(O, best->bo);
  std::vector<SubDivision> divs;
  divs.reserve(size_t(S) * fb.size() * ob.size());
  for (i64 s = 0; s < S; ++s)
    for (const auto& fs : fb)
      for (const auto& os : ob) divs.push_back({s, 1, fs.first, fs.second, os.first, os.second});
  finish(std::move(divs));
  return r;
}

// One segment of a plan: its layer realizations, modeled time, and the peak
// working set charged to each domain.
struct Segment {
  std::vector<LayerPlan> layers;
  double seconds = 0;
  double host_peak = 0;
  double device_peak = 0;
  std::optional<Infeasibility> why;
};

// Layers [0, theta) with host-resident data.  Convolutions may be offloaded
// through sublayer_decompose when a device is given (ties stay on the host);
// pooling always runs on the host.
Segment prefix_segment(const NetworkSpec& net, const std::vector<Shape5>& chain,
                       const std::vector<PoolMode>& modes, i64 theta, const HostModel& host,
                       const DeviceModel* device) {
  Segment seg;
  i64 pool_i = 0;
  for (i64 li = 0; li < theta; ++li) {
    const Instance io{chain[size_t(li)], chain[size_t(li + 1)]};
    if (const ConvSpec* conv = std::get_if<ConvSpec>(&net.layers[size_t(li)])) {
      const std::optional<LayerPlan> hp = best_host_conv(io, *conv, host);
      std::optional<SublayerOutcome> dp;
      if (device) {
        SublayerOutcome so = sublayer_decompose(io.in, *conv, *device);
        if (so.feasible()) dp = std::move(so);
      }
      // The host stages the input and output of an offloaded layer.
      const double staging = double(io.in.elements() + io.out.elements());
      const bool dev_ok = dp.has_value() && staging <= host.env.capacity;
      if (hp && (!dev_ok || hp->seconds <= dp->seconds)) {
        seg.host_peak = std::max(seg.host_peak, hp->memory);
        seg.seconds += hp->seconds;
        seg.layers.push_back(*hp);
      } else if (dev_ok) {
        LayerPlan lp;
        lp.kind = dp->kind;
        lp.on_device = true;
        lp.divisions = std::move(dp->divisions);
        lp.seconds = dp->seconds;
        lp.transfer_seconds = dp->transfer_seconds;
        lp.memory = dp->device_memory;
        seg.host_peak = std::max(seg.host_peak, staging);
        seg.device_peak = std::max(seg.device_peak, dp->device_memory);
        seg.seconds += dp->seconds;
        seg.layers.push_back(std::move(lp));
      } else {
        seg.why = Infeasibility{li, "conv: no primitive fits the memory capacities"};
        return seg;
      }
    } else {
      const PoolSpec& pool = std::get<PoolSpec>(net.layers[size_t(li)]);
      const PoolMode mode = modes[size_t(pool_i++)];
      LayerPlan lp;
      lp.kind = pool_kind_of(mode);
      lp.memory = pool_kind_memory(lp.kind, io, host.env);
      if (lp.memory > host.env.capacity) {
        seg.why = Infeasibility{li, "pool: working set exceeds host memory"};
        return seg;
      }
      lp.seconds = pool_flops_general(double(io.in.s), double(io.in.f), io.in.n, pool.window,
                                      mode == PoolMode::fragments) /
                   host.flop_rate;
      seg.host_peak = std::max(seg.host_peak, lp.memory);
      seg.seconds += lp.seconds;
      seg.layers.push_back(std::move(lp));
    }
  }
  return seg;
}

// Layers [theta, L) as a device-only network over sub-batches of the
// theta-layer output batch: the largest sub-batch whose every layer fits
// device memory.  The segment's transfers are the theta-layer output up and
// the network output down, charged to its first and last layer.
Segment suffix_segment(const NetworkSpec& net, const std::vector<Shape5>& chain,
                       const std::vector<PoolMode>& modes, i64 theta, const DeviceModel& device,
                       i64* sub_batch) {
  Segment seg;
  *sub_batch = 0;
  const i64 L = i64(net.layers.size());
  if (theta == L) return seg;

  const i64 s_theta = chain[size_t(theta)].s;
  i64 pool_base = 0;
  for (i64 li = 0; li < theta; ++li)
    if (std::holds_alternative<PoolSpec>(net.layers[size_t(li)])) ++pool_base;

  // Instance of layer li when a chunk of `chunk` images enters the segment;
  // batch factors acquired inside the segment scale along.
  auto scaled = [&](i64 li, i64 chunk) {
    Instance io{chain[size_t(li)], chain[size_t(li + 1)]};
    io.in.s = io.in.s / s_theta * chunk;
    io.out.s = io.out.s / s_theta * chunk;
    return io;
  };

  i64 chosen = 0;
  i64 fail_layer = theta;
  for (i64 cand = s_theta; cand >= 1 && chosen == 0; --cand) {
    bool ok = true;
    i64 pool_i = pool_base;
    for (i64 li = theta; li < L && ok; ++li) {
      const Instance io = scaled(li, cand);
      if (const ConvSpec* conv = std::get_if<ConvSpec>(&net.layers[size_t(li)])) {
        bool any = false;
        for (PrimitiveKind kind : device_conv_kinds(conv->kernel))
          any = any || conv_kind_memory(kind, io, device.profile, device.env) <=
                           device.env.capacity;
        ok = any;
      } else {
        const PoolMode mode = modes[size_t(pool_i++)];
        ok = pool_kind_memory(pool_kind_of(mode), io, device.env) <= device.env.capacity;
      }
      if (!ok && cand == 1) fail_layer = li;
    }
    if (ok) chosen = cand;
  }
  if (chosen == 0) {
    seg.why = Infeasibility{fail_layer, "device: even a unit sub-batch exceeds device memory"};
    return seg;
  }

  *sub_batch = chosen;
  const i64 full_chunks = s_theta / chosen;
  const i64 remainder = s_theta % chosen;
  const double up_seconds = double(chain[size_t(theta)].elements()) / device.transfer_rate;
  const double down_seconds = double(chain[size_t(L)].elements()) / device.transfer_rate;

  i64 pool_i = pool_base;
  for (i64 li = theta; li < L; ++li) {
    const Instance io = scaled(li, chosen);
    LayerPlan lp;
    lp.on_device = true;
    if (const ConvSpec* conv = std::get_if<ConvSpec>(&net.layers[size_t(li)])) {
      std::optional<LayerPlan> best;
      for (PrimitiveKind kind : device_conv_kinds(conv->kernel)) {
        const double mem = conv_kind_memory(kind, io, device.profile, device.env);
        if (mem > device.env.capacity) continue;
        const double rate = device_kind_rate(kind, device);
        double secs =
            double(full_chunks) * conv_kind_flops(kind, io, conv->kernel, device.fft_c) / rate;
        if (remainder > 0)
          secs += conv_kind_flops(kind, scaled(li, remainder), conv->kernel, device.fft_c) / rate;
        if (!best || secs < best->seconds || (secs == best->seconds && mem < best->memory)) {
          LayerPlan c;
          c.kind = kind;
          c.on_device = true;
          c.seconds = secs;
          c.memory = mem;
          best = c;
        }
      }
      lp = *best;  // the sub-batch scan guarantees one kind fits
    } else {
      const PoolSpec& pool = std::get<PoolSpec>(net.layers[size_t(li)]);
      const PoolMode mode = modes[size_t(pool_i++)];
      const bool frag = mode == PoolMode::fragments;
      lp.kind = pool_kind_of(mode);
      lp.memory = pool_kind_memory(lp.kind, io, device.env);
      double secs = double(full_chunks) *
                    pool_flops_general(double(io.in.s), double(io.in.f), io.in.n, pool.window,
                                       frag) /
                    device.flop_rate;
      if (remainder > 0) {
        const Instance rio = scaled(li, remainder);
        secs += pool_flops_general(double(rio.in.s), double(rio.in.f), rio.in.n, pool.window,
                                   frag) /
                device.flop_rate;
      }
      lp.seconds = secs;
    }
    if (li == theta) {
      lp.transfer_seconds += up_seconds;
      lp.seconds += up_seconds;
    }
    if (li == L - 1) {
      lp.transfer_seconds += down_seconds;
      lp.seconds += down_seconds;
    }
    seg.device_peak = std::max(seg.device_peak, lp.memory);
    seg.seconds += lp.seconds;
    seg.layers.push_back(std::move(lp));
  }
  return seg;
}

// Builds the full plan for one (input, modes, theta) choice.  With `pipelined`
// the prefix is restricted to host primitives and the reported seconds are the
// steady-state period max(prefix, suffix) instead of their sum.
PlanOutcome assemble_plan(const NetworkSpec& net, const HostModel& host, const DeviceModel* device,
                          const Shape5& input, const std::vector<PoolMode>& modes, i64 theta,
                          bool pipelined) {
  const i64 L = i64(net.layers.size());
  ShapeChain chain = propagate_shapes(net, input, modes);
  if (!chain.ok()) return {std::nullopt, *chain.violation};

  Segment prefix =
      prefix_segment(net, chain.shapes, modes, theta, host, pipelined ? nullptr : device);
  if (prefix.why) return {std::nullopt, *prefix.why};

  Segment suffix;
  i64 sub_batch = 0;
  if (theta < L) {
    if (!device)
      return {std::nullopt, Infeasibility{theta, "no device domain for the remaining layers"}};
    suffix = suffix_segment(net, chain.shapes, modes, theta, *device, &sub_batch);
    if (suffix.why) return {std::nullopt, *suffix.why};
  }

  double host_peak = prefix.host_peak;
  if (theta < L) {
    // While the suffix streams, the host holds the theta-layer output and
    // accumulates the network output.
    host_peak = std::max(host_peak, double(chain.shapes[size_t(theta)].elements() +
                                           chain.shapes[size_t(L)].elements()));
  }
  if (host_peak > host.env.capacity)
    return {std::nullopt, Infeasibility{-1, "host: working set exceeds memory"}};

  ExecutionPlan plan;
  plan.input = input;
  plan.layers = std::move(prefix.layers);
  plan.layers.insert(plan.layers.end(), suffix.layers.begin(), suffix.layers.end());
  plan.theta = theta;
  plan.device_sub_batch = sub_batch;
  plan.pipelined = pipelined;
  plan.host_peak = host_peak;
  plan.device_peak = std::max(prefix.device_peak, suffix.device_peak);
  plan.seconds =
      pipelined ? std::max(prefix.seconds, suffix.seconds) : prefix.seconds + suffix.seconds;
  const Shape5& last = chain.shapes[size_t(L)];
  plan.voxels = double(last.s) * double(last.voxels());
  plan.voxels_per_second = plan.voxels / plan.seconds;
  return {std::move(plan), {}};
}

// True when the shape chain is valid and every layer's cheapest primitive fits
// the capacity.
bool shape_admissible(const NetworkSpec& net, const Shape5& input,
                      const std::vector<PoolMode>& modes, const ResourceEnv& env,
                      const RadixProfile& profile) {
  const ShapeChain chain = propagate_shapes(net, input, modes);
  if (!chain.ok()) return false;
  i64 pool_i = 0;
  for (i64 li = 0; li < i64(net.layers.size()); ++li) {
    const Instance io{chain.shapes[size_t(li)], chain.shapes[size_t(li + 1)]};
    double cheapest = std::numeric_limits<double>::infinity();
    if (std::holds_alternative<ConvSpec>(net.layers[size_t(li)])) {
      for (PrimitiveKind kind : kHostConvKinds)
        cheapest = std::min(cheapest, conv_kind_memory(kind, io, profile, env));
    } else {
      const PoolMode mode = modes[size_t(pool_i++)];
      cheapest = pool_kind_memory(pool_kind_of(mode), io, env);
    }
    if (cheapest > env.capacity) return false;
  }
  return true;
}

// Every pool-mode assignment consistent with the forced modes, in binary-
// counter order over the unconstrained pools (all-plain first).
std::vector<std::vector<PoolMode>> mode_assignments(const NetworkSpec& net) {
  std::vector<std::optional<PoolMode>> forced;
  for (const LayerSpec& layer : net.layers)
    if (const PoolSpec* pool = std::get_if<PoolSpec>(&layer)) forced.push_back(pool->forced_mode);
  i64 free_count = 0;
  for (const auto& f : forced) free_count += f.has_value() ? 0 : 1;
  require(free_count <= 20, "plan search: too many unconstrained pooling layers");
  std::vector<std::vector<PoolMode>> out;
  for (i64 m = 0; m < (i64(1) << free_count); ++m) {
    std::vector<PoolMode> modes(forced.size());
    i64 bit = 0;
    for (size_t i = 0; i < forced.size(); ++i)
      modes[i] = forced[i] ? *forced[i]
                           : (((m >> bit++) & 1) ? PoolMode::fragments : PoolMode::plain);
    out.push_back(std::move(modes));
  }
  return out;
}

std::vector<Shape5> candidate_shapes(const NetworkSpec& net, const std::vector<PoolMode>& modes,
                                     const SearchBounds& bounds, const ResourceEnv& env,
                                     const RadixProfile& profile) {
  if (!bounds.anisotropic) {
    std::vector<Shape5> cubes =
        enumerate_input_shapes(net, modes, bounds.max_extent, env, profile, bounds.batch);
    if (bounds.min_extent > 0)
      std::erase_if(cubes, [&](const Shape5& s) { return s.n.x < bounds.min_extent; });
    return cubes;
  }
  std::vector<Shape5> shapes;
  const vec3 fov = field_of_view(net);
  for (i64 x = std::max(fov.x, bounds.min_extent); x <= bounds.max_extent; x += bounds.extent_step)
    for (i64 y = std::max(fov.y, bounds.min_extent); y <= bounds.max_extent; y += bounds.extent_step)
      for (i64 z = std::max(fov.z, bounds.min_extent); z <= bounds.max_extent;
           z += bounds.extent_step) {
        const Shape5 input{bounds.batch, net.features_in, vec3{x, y, z}};
        if (shape_admissible(net, input, modes, env, profile)) shapes.push_back(input);
      }
  return shapes;
}

// Strictly-better ordering of plans: throughput, then combined peak memory,
// then input size (lexicographic extents), then smaller theta.
bool strictly_better(const ExecutionPlan& a, const ExecutionPlan& b) {
  if (a.voxels_per_second != b.voxels_per_second) return a.voxels_per_second > b.voxels_per_second;
  const double pa = a.host_peak + a.device_peak;
  const double pb = b.host_peak + b.device_peak;
  if (pa != pb) return pa < pb;
  if (a.input.voxels() != b.input.voxels()) return a.input.voxels() < b.input.voxels();
  if (a.input.n.x != b.input.n.x) return a.input.n.x < b.input.n.x;
  if (a.input.n.y != b.input.n.y) return a.input.n.y < b.input.n.y;
  if (a.input.n.z != b.input.n.z) return a.input.n.z < b.input.n.z;
  if (a.theta != b.theta) return a.theta < b.theta;
  return false;
}

void check_bounds(const SearchBounds& bounds) {
  require(bounds.batch >= 1, "plan search: batch must be positive");
  require(bounds.min_extent >= 0, "plan search: min extent must not be negative");
  require(bounds.extent_step >= 1, "plan search: extent step must be positive");
}

void check_host(const HostModel& host) {
  require(host.flop_rate > 0, "HostModel: flop_rate must be positive");
}

}  // namespace

ShapeChain propagate_shapes(const NetworkSpec& net, const Shape5& input,
                            const std::vector<PoolMode>& pool_modes) {
  net.validate();
  input.validate();
  require(input.f == net.features_in, "propagate_shapes: input features must match the network");
  require(i64(pool_modes.size()) == net.pool_count(),
          "propagate_shapes: one mode per pooling layer required");

  ShapeChain chain;
  chain.shapes.reserve(net.layers.size() + 1);
  chain.shapes.push_back(input);
  Shape5 cur = input;
  i64 pool_i = 0;
  for (i64 li = 0; li < i64(net.layers.size()); ++li) {
    const LayerSpec& spec = net.layers[size_t(li)];
    if (const ConvSpec* conv = std::get_if<ConvSpec>(&spec)) {
      for (int a = 0; a < 3; ++a) {
        if (cur.n[a] < conv->kernel[a]) {
          chain.violation = Infeasibility{li, "conv: kernel larger than image"};
          return chain;
        }
      }
      cur = conv_output(cur, *conv);
    } else {
      const PoolSpec& pool = std::get<PoolSpec>(spec);
      const PoolMode mode = pool_modes[size_t(pool_i++)];
      if (pool.forced_mode)
        require(*pool.forced_mode == mode,
                "propagate_shapes: assignment conflicts with a forced pooling mode");
      if (mode == PoolMode::plain) {
        for (int a = 0; a < 3; ++a) {
          if (cur.n[a] % pool.window[a] != 0) {
            chain.violation = Infeasibility{li, "pool: extents must be divisible by the window"};
            return chain;
          }
        }
        cur.n = {cur.n.x / pool.window.x, cur.n.y / pool.window.y, cur.n.z / pool.window.z};
      } else {
        for (int a = 0; a < 3; ++a) {
          if ((cur.n[a] + 1) % pool.window[a] != 0) {
            chain.violation =
                Infeasibility{li, "pool: extent+1 must be divisible by the window"};
            return chain;
          }
        }
        cur = Shape5{cur.s * pool.window.elements(), cur.f,
                     {cur.n.x / pool.window.x, cur.n.y / pool.window.y,
                      cur.n.z / pool.window.z}};
      }
    }
    chain.shapes.push_back(cur);
  }
  return chain;
}

std::vector<Shape5> enumerate_input_shapes(const NetworkSpec& net,
                                           const std::vector<PoolMode>& pool_modes, i64 max_extent,
                                           const ResourceEnv& env, const RadixProfile& profile,
                                           i64 batch) {
  net.validate();
  require(batch >= 1, "enumerate_input_shapes: batch must be positive");
  require(i64(pool_modes.size()) == net.pool_count(),
          "enumerate_input_shapes: one mode per pooling layer required");
  std::vector<Shape5> shapes;
  const vec3 fov = field_of_view(net);
  for (i64 e = fov.max(); e <= max_extent; ++e) {
    const Shape5 input{batch, net.features_in, vec3::cube(e)};
    if (shape_admissible(net, input, pool_modes, env, profile)) shapes.push_back(input);
  }
  return shapes;
}

SublayerOutcome sublayer_decompose(const Shape5& input, const ConvSpec& conv,
                                   const DeviceModel& device) {
  device.validate();
  input.validate();
  require(conv.features_out > 0 && conv.kernel.all_positive(),
          "sublayer_decompose: malformed conv layer");
  for (int a = 0; a < 3; ++a)
    require(input.n[a] >= conv.kernel[a], "sublayer_decompose: kernel larger than image");

  const Instance io{input, conv_output(input, conv)};
  SublayerOutcome out;
  bool found = false;
  for (PrimitiveKind kind : device_conv_kinds(conv.kernel)) {
    LadderResult lad = run_ladder(kind, io, conv.kernel, device);
    if (!lad.ok) continue;
    const double secs = lad.compute + lad.transfer;
    if (!found || secs < out.seconds || (secs == out.seconds && lad.memory < out.device_memory)) {
      out.divisions = std::move(lad.divisions);
      out.kind = kind;
      out.compute_seconds = lad.compute;
      out.transfer_seconds = lad.transfer;
      out.seconds = secs;
      out.device_memory = lad.memory;
      found = true;
    }
  }
  if (!found) out.why = Infeasibility{-1, "sublayer: even a (1,1,1) slice exceeds device memory"};
  return out;
}

PlanOutcome split_plan(const NetworkSpec& net, const HostModel& host, const Shape5& input,
                       const std::vector<PoolMode>& pool_modes, const DeviceModel& device,
                       i64 theta) {
  check_host(host);
  device.validate();
  net.validate();
  require(theta >= 0 && theta <= i64(net.layers.size()), "split_plan: theta out of range");
  return assemble_plan(net, host, &device, input, pool_modes, theta, false);
}

PlanOutcome optimize_plan(const NetworkSpec& net, const HostModel& host,
                          const SearchBounds& bounds) {
  net.validate();
  check_host(host);
  check_bounds(bounds);
  PlanOutcome best{std::nullopt, Infeasibility{-1, "no feasible plan within the search bounds"}};
  for (const std::vector<PoolMode>& modes : mode_assignments(net)) {
    for (const Shape5& input : candidate_shapes(net, modes, bounds, host.env, host.profile)) {
      PlanOutcome cand =
          assemble_plan(net, host, nullptr, input, modes, i64(net.layers.size()), false);
      if (!cand.feasible()) continue;
      if (!best.feasible() || strictly_better(*cand.plan, *best.plan)) best = std::move(cand);
    }
  }
  return best;
}

PlanOutcome optimize_plan(const NetworkSpec& net, const HostModel& host, const DeviceModel& device,
                          const SearchBounds& bounds) {
  net.validate();
  check_host(host);
  device.validate();
  check_bounds(bounds);
  // Shape admissibility under a device is decided by the split itself, so the
  // enumeration filters on shape rules alone.
  ResourceEnv relaxed = host.env;
  relaxed.capacity = std::numeric_limits<double>::infinity();
  PlanOutcome best{std::nullopt, Infeasibility{-1, "no feasible plan within the search bounds"}};
  for (const std::vector<PoolMode>& modes : mode_assignments(net)) {
    for (const Shape5& input : candidate_shapes(net, modes, bounds, relaxed, host.profile)) {
      for (i64 theta = 0; theta <= i64(net.layers.size()); ++theta) {
        PlanOutcome cand = assemble_plan(net, host, &device, input, modes, theta, false);
        if (!cand.feasible()) continue;
        if (!best.feasible() || strictly_better(*cand.plan, *best.plan)) best = std::move(cand);
      }
    }
  }
  return best;
}

PlanOutcome pipeline_plan(const NetworkSpec& net, const HostModel& host, const DeviceModel& device,
                          const SearchBounds& bounds) {
  net.validate();
  check_host(host);
  device.validate();
  check_bounds(bounds);
  ResourceEnv relaxed = host.env;
  relaxed.capacity = std::numeric_limits<double>::infinity();
  PlanOutcome best{std::nullopt,
                   Infeasibility{-1, "no feasible pipeline within the search bounds"}};
  for (const std::vector<PoolMode>& modes : mode_assignments(net)) {
    for (const Shape5& input : candidate_shapes(net, modes, bounds, relaxed, host.profile)) {
      for (i64 theta = 0; theta <= i64(net.layers.size()); ++theta) {
        PlanOutcome cand = assemble_plan(net, host, &device, input, modes, theta, true);
        if (!cand.feasible()) continue;
        if (!best.feasible() || strictly_better(*cand.plan, *best.plan)) best = std::move(cand);
      }
    }
  }
  return best;
}

}  // namespace vx
