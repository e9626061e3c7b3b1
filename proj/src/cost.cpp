#include "voxin/cost.hpp"

#include <algorithm>
#include <cmath>

namespace vx {

const char* to_string(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::direct_naive: return "direct-naive";
    case PrimitiveKind::direct_temp: return "direct-temp";
    case PrimitiveKind::fft_data_parallel: return "fft-data-parallel";
    case PrimitiveKind::fft_task_parallel: return "fft-task-parallel";
    case PrimitiveKind::fft_staged: return "fft-staged";
    case PrimitiveKind::device_direct_default: return "device-direct-default";
    case PrimitiveKind::device_direct_precomp: return "device-direct-precomp";
    case PrimitiveKind::device_fft: return "device-fft";
    case PrimitiveKind::pool_plain: return "pool-plain";
    default: return "pool-fragments";
  }
}

double layer_flops(PrimitiveKind kind, double S, double f, double f_out, double n, double k_or_p,
                   double C) {
  const double n3 = n * n * n;
  switch (kind) {
    case PrimitiveKind::direct_naive:
    case PrimitiveKind::direct_temp:
    case PrimitiveKind::device_direct_default:
    case PrimitiveKind::device_direct_precomp: {
      const double k3 = k_or_p * k_or_p * k_or_p;
      return S * f_out * f * n3 * k3;
    }
    case PrimitiveKind::fft_data_parallel:
    case PrimitiveKind::fft_task_parallel:
    case PrimitiveKind::fft_staged:
    case PrimitiveKind::device_fft: {
      const double ln = std::log(n);
      const double k = k_or_p;
      return S * 3.0 * C * n3 * ln * (f_out + f) + 4.0 * S * f_out * f * n3 +
             f * f_out * C * n * ln * (k * k + k * n + n * n);
    }
    case PrimitiveKind::pool_plain:
      return S * f * n3;
    default: {  // pool_fragments
      const double p3 = k_or_p * k_or_p * k_or_p;
      return S * f * n3 * p3;
    }
  }
}

double layer_memory(PrimitiveKind kind, double S, double f, double f_out, double n, double n_out,
                    double ntilde, const ResourceEnv& env) {
  const double nt = ntilde;
  switch (kind) {
    case PrimitiveKind::direct_naive:
    case PrimitiveKind::device_direct_default:
      return S * f * n + S * f_out * n_out;
    case PrimitiveKind::direct_temp:
      return S * f * n + S * f_out * n_out + env.workers * n_out;
    case PrimitiveKind::device_direct_precomp:
      return 2.0 * S * f * n + S * f_out * n_out;
    case PrimitiveKind::fft_data_parallel:
      return std::max(S * f * (n + nt), S * f_out * n_out + (S * f + 1.0) * nt);
    case PrimitiveKind::fft_task_parallel:
      return std::max({S * f * (n + nt), S * (f + f_out) * nt + env.workers * nt,
                       S * f_out * (n_out + nt)});
    case PrimitiveKind::fft_staged:
      return std::max({S * f * (n + nt) + f * nt, S * (f + f_out) * nt + 2.0 * f * nt,
                       S * f_out * (n_out + nt) + f_out * nt});
    case PrimitiveKind::device_fft:
      return env.fft_overhead +
             std::max({S * f * (n + nt) + f * nt, S * (f + f_out) * nt + 2.0 * f * nt,
                       S * f_out * (n_out + nt) + f_out * nt});
    default:  // pools
      return S * f * (n + n_out);
  }
}

double transformed_real_elements(vec3 n, const RadixProfile& profile) {
  const vec3 p = optimal_fft_sizes(n, profile);
  return 2.0 * static_cast<double>((p.x / 2 + 1) * p.y * p.z);
}

double conv_direct_flops_general(double S, double f, double f_out, vec3 n, vec3 k) {
  return S * f_out * f * static_cast<double>(n.elements()) * static_cast<double>(k.elements());
}

double conv_fft_flops_general(double S, double f, double f_out, vec3 n, vec3 k, double C) {
  const double N = static_cast<double>(n.elements());
  const double lx = std::log(static_cast<double>(n.x));
  const double ly = std::log(static_cast<double>(n.y));
  const double lz = std::log(static_cast<double>(n.z));
  const double image = C * (N * lx + N * ly + N * lz);  // dense transform of one image
  // pruned kernel transform: line counts shrink with the kernel extents
  const double nx = static_cast<double>(n.x), ny = static_cast<double>(n.y), nz = static_cast<double>(n.z);
  const double kernel = C * (static_cast<double>(k.y) * static_cast<double>(k.z) * nx * lx +
                             nx * static_cast<double>(k.z) * ny * ly + nx * ny * nz * lz);
  return S * (f + f_out) * image + 4.0 * S * f * f_out * N + f * f_out * kernel;
}

double pool_flops_general(double S, double f, vec3 n, vec3 p, bool fragments) {
  const double N = static_cast<double>(n.elements());
  return fragments ? S * f * N * static_cast<double>(p.elements()) : S * f * N;
}

vec3 field_of_view(const NetworkSpec& net) {
  net.validate();
  vec3 fov{1, 1, 1}, stride{1, 1, 1};
  for (const auto& l : net.layers) {
    if (const auto* c = std::get_if<ConvSpec>(&l)) {
      for (int a = 0; a < 3; ++a) fov[a] += (c->kernel[a] - 1) * stride[a];
    } else {
      const auto& p = std::get<PoolSpec>(l);
      for (int a = 0; a < 3; ++a) {
        fov[a] += (p.window[a] - 1) * stride[a];
        stride[a] *= p.window[a];
      }
    }
  }
  return fov;
}

namespace {

// Ops per dense output voxel of the all-fragment configuration at the given
// input extents.  Fragment extents use floor(e/p) even where the strict
// divisibility rule would fail, so the model stays defined on every n.
double per_voxel_ops(const NetworkSpec& net, vec3 input, i64 S0, bool direct_convs, double C) {
  const vec3 fov = field_of_view(net);
  require(input.x >= fov.x && input.y >= fov.y && input.z >= fov.z,
          "theoretical_speedup: input smaller than the field of view");

  double ops = 0;
  double batch = static_cast<double>(S0);
  double f = static_cast<double>(net.features_in);
  vec3 e = input;
  for (const auto& l : net.layers) {
    if (const auto* c = std::get_if<ConvSpec>(&l)) {
      const double fo = static_cast<double>(c->features_out);
      ops += direct_convs ? conv_direct_flops_general(batch, f, fo, e, c->kernel)
                          : conv_fft_flops_general(batch, f, fo, e, c->kernel, C);
      e = e - c->kernel + vec3{1, 1, 1};
      f = fo;
    } else {
      const auto& p = std::get<PoolSpec>(l);
      ops += pool_flops_general(batch, f, e, p.window, true);
      batch *= static_cast<double>(p.window.elements());
      e = {e.x / p.window.x, e.y / p.window.y, e.z / p.window.z};
    }
    require(e.all_positive(), "theoretical_speedup: extents vanish inside the network");
  }
  const vec3 dense = input - fov + vec3{1, 1, 1};
  return ops / (static_cast<double>(S0) * static_cast<double>(dense.elements()));
}

}  // namespace

double theoretical_speedup(const NetworkSpec& net, i64 n, i64 S, const SpeedupOptions& opt) {
  require(S > 0, "theoretical_speedup: batch must be positive");
  const vec3 fov = field_of_view(net);
  const double base = per_voxel_ops(net, fov, 1, opt.direct_baseline, opt.fft_c);
  const double run = per_voxel_ops(net, vec3::cube(n), S, false, opt.fft_c);
  return base / run;
}

double speedup_memory_required(const NetworkSpec& net, i64 n, i64 S) {
  const RadixProfile profile = RadixProfile::host_default();
  double peak = 0;
  double batch = static_cast<double>(S);
  double f = static_cast<double>(net.features_in);
  vec3 e = vec3::cube(n);
  ResourceEnv env;  // the data-parallel row carries no worker term
  for (const auto& l : net.layers) {
    if (const auto* c = std::get_if<ConvSpec>(&l)) {
      const vec3 out = e - c->kernel + vec3{1, 1, 1};
      require(out.all_positive(), "speedup_memory_required: extents vanish");
      const double m = layer_memory(PrimitiveKind::fft_data_parallel, batch, f,
                                    static_cast<double>(c->features_out),
                                    static_cast<double>(e.elements()),
                                    static_cast<double>(out.elements()),
                                    transformed_real_elements(e, profile), env);
      peak = std::max(peak, m);
      e = out;
      f = static_cast<double>(c->features_out);
    } else {
      const auto& p = std::get<PoolSpec>(l);
      const vec3 out{e.x / p.window.x, e.y / p.window.y, e.z / p.window.z};
      require(out.all_positive(), "speedup_memory_required: extents vanish");
      const double frag_out = static_cast<double>(p.window.elements() * out.elements());
      peak = std::max(peak, layer_memory(PrimitiveKind::pool_fragments, batch, f, f,
                                         static_cast<double>(e.elements()), frag_out, 0, env));
      batch *= static_cast<double>(p.window.elements());
      e = out;
    }
  }
  return peak;
}

}  // namespace vx
