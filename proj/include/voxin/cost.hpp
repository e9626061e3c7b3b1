#pragma once

#include <limits>

#include "voxin/fft.hpp"
#include "voxin/network.hpp"

namespace vx {

// Every way a layer instance can be realized.  The three device conv kinds
// carry cost/memory models; at execution time device-resident layers run the
// matching host kernel under the device memory cap.
enum class PrimitiveKind : unsigned char {
  direct_naive,
  direct_temp,
  fft_data_parallel,
  fft_task_parallel,
  fft_staged,
  device_direct_default,
  device_direct_precomp,
  device_fft,
  pool_plain,
  pool_fragments,
};

const char* to_string(PrimitiveKind k);

constexpr bool is_pool_kind(PrimitiveKind k) {
  return k == PrimitiveKind::pool_plain || k == PrimitiveKind::pool_fragments;
}
constexpr bool is_device_kind(PrimitiveKind k) {
  return k == PrimitiveKind::device_direct_default || k == PrimitiveKind::device_direct_precomp ||
         k == PrimitiveKind::device_fft;
}

// Arithmetic/transfer model of one execution domain.
struct CostConstants {
  double fft_c = 2.5;          // constant C of the transform flop model
  double flop_rate = 5e10;     // modeled flops per second
  double transfer_rate = 2e9;  // scalars per second moved to/from the domain
};

// Capacities a primitive runs against.
struct ResourceEnv {
  double workers = 1;                                          // T
  double capacity = std::numeric_limits<double>::infinity();   // scalars
  double fft_overhead = 0;                                     // K: transform library constant
};

// Modeled flop count for one layer on cubic extents; natural log throughout.
//   direct kinds:        S * f' * f * n^3 * k^3
//   fft kinds:           S*3C*n^3*log(n)*(f'+f) + 4S*f'*f*n^3
//                          + f*f'*C*n*log(n)*(k^2 + k*n + n^2)
//   pool_plain:          S * f * n^3
//   pool_fragments:      S * f * n^3 * p^3
double layer_flops(PrimitiveKind kind, double S, double f, double f_out, double n, double k_or_p,
                   double C);

// Modeled peak working set in real-scalar equivalents.  n, n_out are element
// counts of one input/output image (for pools, n_out counts all fragments of
// one input image); ntilde is the transformed-image count
// 2*(floor(x'/2)+1)*y'*z'.
//   direct_naive / device_direct_default:  S*f*n + S*f'*n_out
//   direct_temp:                           S*f*n + S*f'*n_out + T*n_out
//   device_direct_precomp:                 2*S*f*n + S*f'*n_out
//   fft_data_parallel:    max{ S*f*(n+nt), S*f'*n_out + (S*f+1)*nt }
//   fft_task_parallel:    max{ S*f*(n+nt), S*(f+f')*nt + T*nt, S*f'*(n_out+nt) }
//   fft_staged:           max{ S*f*(n+nt)+f*nt, S*(f+f')*nt+2f*nt, S*f'*(n_out+nt)+f'*nt }
//   device_fft:           K + the fft_staged expression
//   pools:                S*f*(n + n_out)
double layer_memory(PrimitiveKind kind, double S, double f, double f_out, double n, double n_out,
                    double ntilde, const ResourceEnv& env);

// ntilde for an image of extents n padded per the profile.
double transformed_real_elements(vec3 n, const RadixProfile& profile);

// Anisotropic generalizations used by the planner (equal to the cubic
// expressions on cubes).
double conv_direct_flops_general(double S, double f, double f_out, vec3 n, vec3 k);
double conv_fft_flops_general(double S, double f, double f_out, vec3 n, vec3 k, double C);
double pool_flops_general(double S, double f, vec3 n, vec3 p, bool fragments);

// Input extent at which the network output is a single voxel; +1 output voxel
// per extra input voxel along each axis.
vec3 field_of_view(const NetworkSpec& net);

// Modeled ops-per-output-voxel ratio of the single-voxel computation at the
// field of view against the dense all-fragment computation at cubic input n,
// batch S.  Equals 1 at (n = field of view, S = 1) by construction.
struct SpeedupOptions {
  bool direct_baseline = false;  // cost the field-of-view run with direct convs
  double fft_c = 2.5;
};
double theoretical_speedup(const NetworkSpec& net, i64 n, i64 S, const SpeedupOptions& opt = {});

// Peak modeled memory (scalars) of the all-fragment FFT configuration at
// cubic input n, batch S; the x-axis of speedup-vs-memory curves.
double speedup_memory_required(const NetworkSpec& net, i64 n, i64 S);

}  // namespace vx
