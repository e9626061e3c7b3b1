#pragma once

#include <optional>
#include <string>
#include <vector>

#include "voxin/cost.hpp"
#include "voxin/network.hpp"
#include "voxin/shape.hpp"

namespace vx {

// Arithmetic rates, memory capacity, and transform policy of the host domain.
struct HostModel {
  ResourceEnv env;          // workers and memory capacity (scalars)
  double flop_rate = 5e10;  // modeled flops per second
  double fft_c = 2.5;       // transform flop-model constant
  RadixProfile profile = RadixProfile::host_default();
};

// The second resource domain: computation behind a memory cap, with every
// tensor crossing a modeled link to and from host storage.
struct DeviceModel {
  ResourceEnv env;              // device capacity (scalars), kernel workers, transform overhead K
  double flop_rate = 1e11;      // modeled flops per second for transform-based kinds
  double direct_flop_rate = 0;  // distinct rate for the direct kinds; 0 means flop_rate
  double fft_c = 2.5;
  double transfer_rate = 2e9;   // scalars per second, each direction; must be positive
  RadixProfile profile = RadixProfile::device_default();

  double direct_rate() const { return direct_flop_rate > 0 ? direct_flop_rate : flop_rate; }
  void validate() const {
    require(flop_rate > 0 && transfer_rate > 0, "DeviceModel: rates must be positive");
  }
};

// The constraint that stopped planning, tied to the first offending layer
// (layer = -1 when no single layer is responsible).
struct Infeasibility {
  i64 layer = -1;
  std::string rule;
};

// Input shape followed by each layer's output shape.  On a rule violation the
// chain stops at the offending layer and `violation` names the broken rule.
struct ShapeChain {
  std::vector<Shape5> shapes;
  std::optional<Infeasibility> violation;
  bool ok() const { return !violation.has_value(); }
};

// Applies the per-layer shape rules: a convolution shrinks extents by k-1, a
// plain pooling divides extents (divisibility required), and fragment pooling
// requires extent+1 divisible by the window, keeps floor(n/p) per fragment,
// and multiplies the batch by the window volume.  `pool_modes` carries one
// mode per pooling layer in network order.
ShapeChain propagate_shapes(const NetworkSpec& net, const Shape5& input,
                            const std::vector<PoolMode>& pool_modes);

// All cubic input extents in [field of view, max_extent] whose shape chain is
// valid and whose cheapest-primitive working set fits env.capacity at every
// layer.  The batch is fixed by the caller.  max_extent below the field of
// view, or a capacity nothing fits, yields an empty list.
std::vector<Shape5> enumerate_input_shapes(
    const NetworkSpec& net, const std::vector<PoolMode>& pool_modes, i64 max_extent,
    const ResourceEnv& env, const RadixProfile& profile = RadixProfile::host_default(),
    i64 batch = 1);

// One slice of a decomposed convolutional layer: batch rows [s0, s0+s_n),
// input maps [f0, f0+f_n), output maps [o0, o0+o_n).
struct SubDivision {
  i64 s0 = 0, s_n = 0;
  i64 f0 = 0, f_n = 0;
  i64 o0 = 0, o_n = 0;
};

// How one decomposed convolution runs on the device: the slice list, the kind
// used for every slice, and the modeled cost of computing and moving them.
struct SublayerOutcome {
  std::vector<SubDivision> divisions;
  PrimitiveKind kind = PrimitiveKind::device_direct_default;
  double compute_seconds = 0;
  double transfer_seconds = 0;
  double seconds = 0;        // compute + transfer
  double device_memory = 0;  // peak modeled working set over the slices (scalars)
  std::optional<Infeasibility> why;
  bool feasible() const { return !why.has_value(); }
};

// Decomposes one convolutional layer so every slice fits device memory.
// Kernels up to 5 extent per axis consider the direct device kinds, larger
// kernels the transform kind.  A layer that fits whole stays one slice; a
// multi-entry batch is preferentially cut into whole-feature sub-batches (each
// input slice crosses the link exactly once); otherwise single-entry slices
// with uniform feature blocks (plus remainders) are searched for the cheapest
// modeled compute + transfer.  Returns infeasible if even a (1,1,1) slice
// exceeds device capacity.
SublayerOutcome sublayer_decompose(const Shape5& input, const ConvSpec& conv,
                                   const DeviceModel& device);

// Realization of one layer inside a plan.
struct LayerPlan {
  PrimitiveKind kind = PrimitiveKind::direct_naive;
  bool on_device = false;
  std::vector<SubDivision> divisions;  // device convs executed one layer at a time
  double seconds = 0;                  // modeled compute + transfer time
  double transfer_seconds = 0;         // transfer share of `seconds`
  double memory = 0;                   // modeled working set in the layer's domain (scalars)
};

// A fully decided execution: where each layer runs, with which primitive and
// decomposition, and what the model predicts for the whole run.
struct ExecutionPlan {
  Shape5 input;
  std::vector<LayerPlan> layers;  // aligned with NetworkSpec::layers
  i64 theta = 0;                  // layers [0, theta) run one layer at a time; the rest
                                  // batch-at-a-time on the device
  i64 device_sub_batch = 0;       // sub-batch size of the device suffix (0: no suffix)
  bool pipelined = false;         // seconds is the steady-state period, not the serial sum
  double host_peak = 0;           // modeled peak memory per domain, scalars
  double device_peak = 0;
  double seconds = 0;
  double voxels = 0;  // output batch times spatial voxels per image (dense after recombination)
  double voxels_per_second = 0;
};

struct PlanOutcome {
  std::optional<ExecutionPlan> plan;
  Infeasibility why;  // meaningful only when !feasible()
  bool feasible() const { return plan.has_value(); }
};

// Bounds of the plan search.
struct SearchBounds {
  i64 max_extent = 0;
  i64 min_extent = 0;        // raise the lower edge above the field of view (0: fov)
  i64 batch = 1;             // input batch size S
  bool anisotropic = false;  // also enumerate non-cubic inputs
  i64 extent_step = 1;       // per-axis stride of the anisotropic enumeration
};

// Serial two-domain plan at a fixed split index theta: layers [0, theta) run
// one layer at a time with host-resident data (each convolution either on the
// host or decomposed onto the device; pooling stays on the host), the rest as
// a device-only network over sub-batches of the theta-layer output.  theta = 0
// is device-only, theta = layer count host-only.  Transfers are charged once
// up and once down per device-resident slice, and once up plus once down for
// the whole batched suffix.
PlanOutcome split_plan(const NetworkSpec& net, const HostModel& host, const Shape5& input,
                       const std::vector<PoolMode>& pool_modes, const DeviceModel& device,
                       i64 theta);

// Exhaustive search over pooling modes, admissible input shapes, and per-conv
// primitives (plus theta and sub-layer divisions when a device participates),
// scored by modeled throughput = output voxels / total modeled seconds.  Ties
// break toward smaller peak memory, then smaller input extent, then smaller
// theta.  Pure functions: identical inputs return identical plans.
PlanOutcome optimize_plan(const NetworkSpec& net, const HostModel& host,
                          const SearchBounds& bounds);
PlanOutcome optimize_plan(const NetworkSpec& net, const HostModel& host,
                          const DeviceModel& device, const SearchBounds& bounds);

// Producer-consumer split: the host computes layers [0, theta) with host
// primitives while the device consumes queued intermediates (queue capacity
// one) and runs the rest batch-at-a-time.  Steady-state period is
// max(host segment, device segment); throughput is voxels / period.  Host
// memory must hold the theta-layer output plus the network output.  Returns
// the best (theta, shape, modes) combination.
PlanOutcome pipeline_plan(const NetworkSpec& net, const HostModel& host,
                          const DeviceModel& device, const SearchBounds& bounds);

}  // namespace vx
