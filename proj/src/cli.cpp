#include "voxin/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "voxin/cost.hpp"
#include "voxin/execute.hpp"
#include "voxin/layers.hpp"
#include "voxin/netspec.hpp"
#include "voxin/planner.hpp"
#include "voxin/task_conv.hpp"

namespace vx {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInfeasible = 2;

struct Options {
  std::string net_path;
  double host_mem = 0;         // scalars; 0 = unlimited
  double dev_mem = 0;          // scalars; 0 = host only
  double transfer_rate = 2e9;  // scalars per second, each direction
  i64 max_extent = 0;          // 0 = field of view + 16
  std::vector<i64> batches;    // empty = {1}
  int precision = 32;
  i64 workers = 1;
  std::uint64_t seed = 1;
  std::string csv_path;
};

NetworkSpec load_net(const Options& opt) {
  require(!opt.net_path.empty(), "a network file is required (--net FILE)");
  std::ifstream in(opt.net_path);
  if (!in) throw std::runtime_error("cannot open network file '" + opt.net_path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_network_spec(buf.str());
}

HostModel host_model(const Options& opt) {
  HostModel h;
  h.env.workers = static_cast<double>(std::max<i64>(1, opt.workers));
  if (opt.host_mem > 0) h.env.capacity = opt.host_mem;
  return h;
}

std::optional<DeviceModel> device_model(const Options& opt) {
  if (opt.dev_mem <= 0) return std::nullopt;
  DeviceModel d;
  d.env.capacity = opt.dev_mem;
  d.transfer_rate = opt.transfer_rate;
  return d;
}

i64 batch_of(const Options& opt) { return opt.batches.empty() ? 1 : opt.batches.front(); }

i64 resolve_max_extent(const Options& opt, const NetworkSpec& net) {
  if (opt.max_extent > 0) return opt.max_extent;
  const vec3 fov = field_of_view(net);
  return std::max({fov.x, fov.y, fov.z}) + 16;
}

template <class T>
void fill_random(Tensor5<T>& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  T* p = t.data();
  for (i64 i = 0; i < t.size(); ++i) p[i] = static_cast<T>(d(rng));
}

// CSV rows go to --csv FILE when given, to `out` otherwise.
struct CsvSink {
  std::ofstream file;
  std::ostream* os = nullptr;
  bool to_file = false;

  explicit CsvSink(const Options& opt, std::ostream& out) {
    if (opt.csv_path.empty()) {
      os = &out;
      return;
    }
    file.open(opt.csv_path);
    if (!file) throw std::runtime_error("cannot open CSV file '" + opt.csv_path + "'");
    os = &file;
    to_file = true;
  }
  std::ostream& stream() { return *os; }
};

// ---------------------------------------------------------------------------
// fov

int run_fov(const Options& opt, std::ostream& out) {
  const NetworkSpec net = load_net(opt);
  out << to_string(field_of_view(net)) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// plan

bool layer_is_conv(const NetworkSpec& net, std::size_t i) {
  return std::holds_alternative<ConvSpec>(net.layers[i]);
}

nlohmann::json plan_record(const ExecutionPlan& p, const NetworkSpec& net) {
  nlohmann::json j;
  j["input"] = {{"batch", p.input.s},
                {"features", p.input.f},
                {"extent", {p.input.n.x, p.input.n.y, p.input.n.z}}};
  j["theta"] = p.theta;
  j["device_sub_batch"] = p.device_sub_batch;
  j["pipelined"] = p.pipelined;
  j["seconds"] = p.seconds;
  j["voxels"] = p.voxels;
  j["voxels_per_second"] = p.voxels_per_second;
  j["host_peak"] = p.host_peak;
  j["device_peak"] = p.device_peak;
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const LayerPlan& lp = p.layers[i];
    nlohmann::json l;
    l["index"] = i;
    l["layer"] = layer_is_conv(net, i) ? "conv" : "pool";
    l["kind"] = to_string(lp.kind);
    l["domain"] = lp.on_device ? "device" : "host";
    l["seconds"] = lp.seconds;
    l["transfer_seconds"] = lp.transfer_seconds;
    l["memory"] = lp.memory;
    if (!lp.divisions.empty()) {
      nlohmann::json divs = nlohmann::json::array();
      for (const SubDivision& d : lp.divisions)
        divs.push_back({{"s0", d.s0},
                        {"s_n", d.s_n},
                        {"f0", d.f0},
                        {"f_n", d.f_n},
                        {"o0", d.o0},
                        {"o_n", d.o_n}});
      l["divisions"] = std::move(divs);
    }
    layers.push_back(std::move(l));
  }
  j["layers"] = std::move(layers);
  return j;
}

void print_plan_text(const ExecutionPlan& p, const NetworkSpec& net, std::ostream& out) {
  out << "input " << to_string(p.input) << "  theta " << p.theta;
  if (p.device_sub_batch > 0) out << "  device-sub-batch " << p.device_sub_batch;
  out << "\n";
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const LayerPlan& lp = p.layers[i];
    out << "  layer " << std::setw(2) << i << "  " << (layer_is_conv(net, i) ? "conv" : "pool")
        << "  " << std::left << std::setw(22) << to_string(lp.kind) << std::right
        << (lp.on_device ? "device" : "host  ") << "  " << std::scientific
        << std::setprecision(3) << lp.seconds << " s  mem " << lp.memory << std::defaultfloat;
    if (!lp.divisions.empty()) out << "  slices " << lp.divisions.size();
    out << "\n";
  }
  out << "model: " << std::scientific << std::setprecision(4) << p.voxels_per_second
      << " voxels/s  (" << p.voxels << " voxels in " << p.seconds << " s)" << std::defaultfloat
      << "\n";
  out << "peaks: host " << p.host_peak << "  device " << p.device_peak << " scalars\n";
}

int run_plan(const Options& opt, std::ostream& out, std::ostream& err) {
  const NetworkSpec net = load_net(opt);
  const HostModel host = host_model(opt);
  const std::optional<DeviceModel> dev = device_model(opt);
  SearchBounds bounds;
  bounds.max_extent = resolve_max_extent(opt, net);
  bounds.batch = batch_of(opt);

  const PlanOutcome po =
      dev ? optimize_plan(net, host, *dev, bounds) : optimize_plan(net, host, bounds);
  if (!po.feasible()) {
    err << "infeasible: " << po.why.rule;
    if (po.why.layer >= 0) err << " (layer " << po.why.layer << ")";
    err << "\n";
    return kExitInfeasible;
  }
  print_plan_text(*po.plan, net, out);
  nlohmann::json record = plan_record(*po.plan, net);

  if (dev) {
    const PlanOutcome pipe = pipeline_plan(net, host, *dev, bounds);
    if (pipe.feasible()) {
      out << "pipeline: " << std::scientific << std::setprecision(4)
          << pipe.plan->voxels_per_second << " voxels/s at input "
          << to_string(pipe.plan->input) << ", theta " << pipe.plan->theta << std::defaultfloat
          << "\n";
      record["pipeline"] = {{"voxels_per_second", pipe.plan->voxels_per_second},
                            {"seconds", pipe.plan->seconds},
                            {"theta", pipe.plan->theta},
                            {"input",
                             {{"batch", pipe.plan->input.s},
                              {"features", pipe.plan->input.f},
                              {"extent",
                               {pipe.plan->input.n.x, pipe.plan->input.n.y,
                                pipe.plan->input.n.z}}}}};
    }
  }
  out << record.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bench

template <class T>
int run_bench(const Options& opt, std::ostream& out, std::ostream& err) {
  const NetworkSpec net = load_net(opt);
  const HostModel host = host_model(opt);
  const std::optional<DeviceModel> dev = device_model(opt);
  const vec3 fov = field_of_view(net);
  const i64 lo = std::max({fov.x, fov.y, fov.z});
  const i64 hi = resolve_max_extent(opt, net);

  CsvSink csv(opt, out);
  std::ostream& note = csv.to_file ? out : err;
  note << "seed " << opt.seed << "\n";

  std::ostream& c = csv.stream();
  c << std::setprecision(12);
  c << "input_extent,memory_model,memory_audited,voxels_per_sec,seconds";
  for (std::size_t i = 0; i < net.layers.size(); ++i) c << ",layer" << i << "_ms";
  c << "\n";

  const NetworkWeights<T> weights = random_weights<T>(net, opt.seed);
  ExecutionEnv<T> env;
  env.workers = std::max<i64>(1, opt.workers);
  env.device = dev;

  i64 rows = 0;
  for (i64 e = lo; e <= hi; ++e) {
    SearchBounds bounds;
    bounds.min_extent = e;
    bounds.max_extent = e;
    bounds.batch = batch_of(opt);
    const PlanOutcome po =
        dev ? optimize_plan(net, host, *dev, bounds) : optimize_plan(net, host, bounds);
    if (!po.feasible()) continue;
    const ExecutionPlan& p = *po.plan;

    Tensor5<T> input(p.input);
    fill_random(input, opt.seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(e)));
    ThroughputReport rep;
    try {
      rep = measure_throughput(p, net, weights, input, env);
    } catch (const resource_exhausted& ex) {
      note << "extent " << e << ": skipped (" << ex.what() << ")\n";
      continue;
    }

    c << e << ',' << (p.host_peak + p.device_peak) << ',' << (rep.host_peak + rep.device_peak)
      << ',' << rep.voxels_per_second << ',' << rep.seconds;
    for (double s : rep.layer_seconds) c << ',' << s * 1e3;
    c << "\n";
    ++rows;
  }
  if (csv.to_file) out << "wrote " << rows << " rows to " << opt.csv_path << "\n";
  if (rows == 0) {
    err << "infeasible: no admissible input extent in [" << lo << ", " << hi << "]\n";
    return kExitInfeasible;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// speedup

int run_speedup(const Options& opt, std::ostream& out, std::ostream& err) {
  const NetworkSpec net = load_net(opt);
  const HostModel host = host_model(opt);
  const i64 hi = resolve_max_extent(opt, net);
  const std::vector<i64> batches = opt.batches.empty() ? std::vector<i64>{1} : opt.batches;
  const std::vector<PoolMode> modes(static_cast<std::size_t>(net.pool_count()),
                                    PoolMode::fragments);

  CsvSink csv(opt, out);
  std::ostream& c = csv.stream();
  c << std::setprecision(12);
  c << "memory_required,batch,speedup\n";

  i64 rows = 0;
  for (const i64 S : batches) {
    require(S > 0, "--batch entries must be positive");
    const std::vector<Shape5> shapes =
        enumerate_input_shapes(net, modes, hi, host.env, host.profile, S);
    for (const Shape5& sh : shapes) {
      c << speedup_memory_required(net, sh.n.x, S) << ',' << S << ','
        << theoretical_speedup(net, sh.n.x, S) << "\n";
      ++rows;
    }
  }
  if (csv.to_file) out << "wrote " << rows << " rows to " << opt.csv_path << "\n";
  if (rows == 0) {
    err << "infeasible: no admissible all-fragment input up to extent " << hi << "\n";
    return kExitInfeasible;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify

double max_abs(const Tensor5<double>& t) {
  double m = 0;
  const double* p = t.data();
  for (i64 i = 0; i < t.size(); ++i) m = std::max(m, std::abs(p[i]));
  return m;
}

double rel_gap(const Tensor5<double>& a, const Tensor5<double>& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  const double scale = std::max({1e-30, max_abs(a), max_abs(b)});
  double gap = 0;
  const double* pa = a.data();
  const double* pb = b.data();
  for (i64 i = 0; i < a.size(); ++i) gap = std::max(gap, std::abs(pa[i] - pb[i]));
  return gap / scale;
}

ConvLayerParams<double> random_params(std::mt19937_64& rng, i64 f_in, i64 f_out, vec3 k) {
  ConvLayerParams<double> p;
  p.kernels = Tensor5<double>(Shape5{f_out, f_in, k});
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (i64 i = 0; i < p.kernels.size(); ++i) p.kernels.data()[i] = d(rng);
  p.bias.resize(static_cast<std::size_t>(f_out));
  for (auto& b : p.bias) b = d(rng);
  p.act = Activation::identity;
  return p;
}

// Every host convolution primitive against the naive one.
bool check_conv_agreement(std::mt19937_64& rng, std::string& detail) {
  std::uniform_int_distribution<i64> sd(1, 2), fd(1, 4), nd(4, 9), kd(1, 3);
  for (int rep = 0; rep < 6; ++rep) {
    const i64 S = sd(rng), f = fd(rng), fo = fd(rng);
    const vec3 n{nd(rng), nd(rng), nd(rng)};
    const vec3 k{kd(rng), kd(rng), kd(rng)};
    Tensor5<double> input(Shape5{S, f, n});
    fill_random(input, rng());
    const ConvLayerParams<double> params = random_params(rng, f, fo, k);
    LayerContext<double> ctx;
    ctx.workers = 2;

    const Tensor5<double> ref =
        conv_direct(input, params, ctx, DirectVariant::naive).output;
    const struct {
      const char* name;
      Tensor5<double> out;
    } rivals[] = {
        {"direct_temp", conv_direct(input, params, ctx, DirectVariant::temp_buffer).output},
        {"fft_data_parallel", conv_fft_data_parallel(input, params, ctx).output},
        {"fft_staged", conv_fft_staged(input, params, ctx).output},
        {"fft_task_parallel", conv_fft_task_parallel(input, params, ctx).output},
    };
    for (const auto& r : rivals) {
      const double gap = rel_gap(ref, r.out);
      if (!(gap <= 1e-10)) {
        std::ostringstream os;
        os << r.name << " deviates by " << gap << " at S=" << S << " f=" << f << "->" << fo
           << " n=" << to_string(n) << " k=" << to_string(k);
        detail = os.str();
        return false;
      }
    }
  }
  return true;
}

NetworkSpec toy_net(std::optional<PoolMode> forced) {
  NetworkSpec net;
  net.features_in = 1;
  net.layers = {ConvSpec{3, {3, 3, 3}, Activation::relu}, PoolSpec{{2, 2, 2}, forced},
                ConvSpec{2, {3, 3, 3}, Activation::identity}};
  return net;
}

std::pair<ExecutionPlan, Tensor5<double>> planned_output(const NetworkSpec& net,
                                                         const HostModel& host, i64 extent,
                                                         const NetworkWeights<double>& w,
                                                         const Tensor5<double>& input,
                                                         const std::optional<DeviceModel>& dev) {
  SearchBounds bounds;
  bounds.min_extent = extent;
  bounds.max_extent = extent;
  const PlanOutcome po =
      dev ? optimize_plan(net, host, *dev, bounds) : optimize_plan(net, host, bounds);
  require(po.feasible(), "verify: expected a feasible plan");
  ExecutionEnv<double> env;
  env.device = dev;
  auto [out, rep] = execute_plan(*po.plan, net, w, Tensor5<double>(input), env);
  (void)rep;
  return {*po.plan, std::move(out)};
}

// The dense fragment-pooling output must equal, voxel for voxel, the plain
// network evaluated on each window-offset crop of the same input.
bool check_window_equivalence(std::mt19937_64& rng, std::string& detail) {
  const NetworkSpec net_frag = toy_net(PoolMode::fragments);
  const NetworkSpec net_plain = toy_net(PoolMode::plain);
  const NetworkWeights<double> w = random_weights<double>(net_frag, rng());
  HostModel host;

  const i64 e = 9;  // dense output extent 2 per axis
  Tensor5<double> input(Shape5{1, 1, {e, e, e}});
  fill_random(input, rng());
  const auto [plan_f, dense] = planned_output(net_frag, host, e, w, input, std::nullopt);
  if (plan_f.layers[1].kind != PrimitiveKind::pool_fragments) {
    detail = "expected the forced fragment pooling in the plan";
    return false;
  }

  const i64 ep = 8;  // plain-admissible crop extent, one output voxel
  for (i64 ox = 0; ox < 2; ++ox)
    for (i64 oy = 0; oy < 2; ++oy)
      for (i64 oz = 0; oz < 2; ++oz) {
        Tensor5<double> crop(Shape5{1, 1, {ep, ep, ep}});
        for (i64 x = 0; x < ep; ++x)
          for (i64 y = 0; y < ep; ++y)
            for (i64 z = 0; z < ep; ++z)
              crop.at(0, 0, x, y, z) = input.at(0, 0, x + ox, y + oy, z + oz);
        const auto [plan_p, one] = planned_output(net_plain, host, ep, w, crop, std::nullopt);
        (void)plan_p;
        for (i64 j = 0; j < 2; ++j) {
          const double got = dense.at(0, j, ox, oy, oz);
          const double want = one.at(0, j, 0, 0, 0);
          const double gap = std::abs(got - want) / std::max(1.0, std::abs(want));
          if (!(gap <= 1e-10)) {
            std::ostringstream os;
            os << "offset " << ox << oy << oz << " feature " << j << " deviates by " << gap;
            detail = os.str();
            return false;
          }
        }
      }
  return true;
}

// Audited working sets stay within the modeled band.
bool check_memory_audit(std::mt19937_64& rng, std::string& detail) {
  Tensor5<double> input(Shape5{1, 8, {12, 12, 12}});
  fill_random(input, rng());
  const ConvLayerParams<double> params = random_params(rng, 8, 8, {3, 3, 3});
  LayerContext<double> ctx;
  ctx.workers = 2;

  const struct {
    const char* name;
    MemoryAudit audit;
  } runs[] = {
      {"direct_naive", conv_direct(input, params, ctx, DirectVariant::naive).audit},
      {"direct_temp", conv_direct(input, params, ctx, DirectVariant::temp_buffer).audit},
      {"fft_data_parallel", conv_fft_data_parallel(input, params, ctx).audit},
      {"fft_staged", conv_fft_staged(input, params, ctx).audit},
      {"fft_task_parallel", conv_fft_task_parallel(input, params, ctx).audit},
      {"pool_plain", max_pool(input, {2, 2, 2}, ctx).audit},
      {"pool_fragments", mpf_pool(Tensor5<double>(Shape5{1, 8, {11, 11, 11}}), {2, 2, 2}, ctx)
                             .audit},
  };
  for (const auto& r : runs) {
    const bool ok = r.audit.peak >= 0.5 * r.audit.model && r.audit.peak <= 1.15 * r.audit.model;
    if (!ok) {
      std::ostringstream os;
      os << r.name << " audited " << r.audit.peak << " vs modeled " << r.audit.model;
      detail = os.str();
      return false;
    }
  }
  return true;
}

bool same_plan(const ExecutionPlan& a, const ExecutionPlan& b) {
  if (!(a.input == b.input) || a.theta != b.theta || a.device_sub_batch != b.device_sub_batch ||
      a.pipelined != b.pipelined || a.seconds != b.seconds ||
      a.voxels_per_second != b.voxels_per_second || a.layers.size() != b.layers.size())
    return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i)
    if (a.layers[i].kind != b.layers[i].kind || a.layers[i].on_device != b.layers[i].on_device ||
        a.layers[i].divisions.size() != b.layers[i].divisions.size())
      return false;
  return true;
}

// Two identical searches must land on the identical plan.
bool check_plan_determinism(std::string& detail) {
  const NetworkSpec net = toy_net(std::nullopt);
  HostModel host;
  DeviceModel dev;
  dev.env.capacity = 2e5;
  SearchBounds bounds;
  bounds.max_extent = 13;

  const PlanOutcome h1 = optimize_plan(net, host, bounds);
  const PlanOutcome h2 = optimize_plan(net, host, bounds);
  if (!h1.feasible() || !h2.feasible() || !same_plan(*h1.plan, *h2.plan)) {
    detail = "host-only search is not reproducible";
    return false;
  }
  const PlanOutcome d1 = optimize_plan(net, host, dev, bounds);
  const PlanOutcome d2 = optimize_plan(net, host, dev, bounds);
  if (!d1.feasible() || !d2.feasible() || !same_plan(*d1.plan, *d2.plan)) {
    detail = "two-domain search is not reproducible";
    return false;
  }
  return true;
}

// A split plan routed through the device must reproduce the host-only result.
bool check_domain_equivalence(std::mt19937_64& rng, std::string& detail) {
  const NetworkSpec net = toy_net(std::nullopt);
  const NetworkWeights<double> w = random_weights<double>(net, rng());
  const i64 e = 9;
  Tensor5<double> input(Shape5{1, 1, {e, e, e}});
  fill_random(input, rng());

  HostModel host;
  const auto [hp, host_out] = planned_output(net, host, e, w, input, std::nullopt);
  (void)hp;

  HostModel slow_host;
  slow_host.flop_rate = 1.0;  // push every convolution onto the device
  DeviceModel dev;
  dev.env.capacity = 1e7;
  const auto [dp, dev_out] = planned_output(net, slow_host, e, w, input, dev);
  bool touched_device = dp.theta < static_cast<i64>(net.layers.size());
  for (const LayerPlan& lp : dp.layers) touched_device = touched_device || lp.on_device;
  if (!touched_device) {
    detail = "expected the slow-host search to use the device";
    return false;
  }
  const double gap = rel_gap(host_out, dev_out);
  if (!(gap <= 1e-10)) {
    std::ostringstream os;
    os << "device route deviates by " << gap;
    detail = os.str();
    return false;
  }
  return true;
}

int run_verify(const Options& opt, std::ostream& out) {
  int fails = 0;
  const auto check = [&](const char* name, auto&& fn) {
    std::string detail;
    bool ok = false;
    try {
      ok = fn(detail);
    } catch (const std::exception& e) {
      detail = e.what();
    }
    out << (ok ? "PASS " : "FAIL ") << name;
    if (!ok && !detail.empty()) out << "  [" << detail << "]";
    out << "\n";
    fails += ok ? 0 : 1;
  };

  std::mt19937_64 rng(opt.seed);
  check("conv-primitive-agreement",
        [&](std::string& d) { return check_conv_agreement(rng, d); });
  check("window-equivalence", [&](std::string& d) { return check_window_equivalence(rng, d); });
  check("memory-audit", [&](std::string& d) { return check_memory_audit(rng, d); });
  check("plan-determinism", [&](std::string& d) { return check_plan_determinism(d); });
  check("domain-equivalence",
        [&](std::string& d) { return check_domain_equivalence(rng, d); });

  out << (fails == 0 ? "verify: all checks passed" : "verify: checks failed") << " (seed "
      << opt.seed << ")\n";
  return fails == 0 ? kExitOk : kExitUsage;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options opt;
  CLI::App app{"Sliding-window 3D ConvNet inference: planner, benchmark, and self-checks"};
  app.name("voxinfer");
  app.require_subcommand(1);

  app.add_option("--net", opt.net_path, "network description file")->envname("VOXIN_NET");
  app.add_option("--host-mem", opt.host_mem,
                 "host memory capacity in scalars (0 = unlimited)")
      ->envname("VOXIN_HOST_MEM");
  app.add_option("--dev-mem", opt.dev_mem,
                 "device memory capacity in scalars (0 = host only)")
      ->envname("VOXIN_DEV_MEM");
  app.add_option("--transfer-rate", opt.transfer_rate,
                 "host-device link rate, scalars per second each direction")
      ->envname("VOXIN_TRANSFER_RATE");
  app.add_option("--max-extent", opt.max_extent,
                 "largest input extent searched (0 = field of view + 16)")
      ->envname("VOXIN_MAX_EXTENT");
  app.add_option("--batch", opt.batches,
                 "input batch size; repeat for several speedup curves")
      ->envname("VOXIN_BATCH");
  app.add_option("--precision", opt.precision, "scalar width of executed runs")
      ->check(CLI::IsMember({32, 64}))
      ->envname("VOXIN_PRECISION");
  app.add_option("--workers", opt.workers, "worker threads for host primitives")
      ->envname("VOXIN_WORKERS");
  app.add_option("--seed", opt.seed, "seed for random weights and self-checks")
      ->envname("VOXIN_SEED");
  app.add_option("--csv", opt.csv_path, "write CSV rows to this file instead of stdout")
      ->envname("VOXIN_CSV");

  CLI::App* cmd_verify =
      app.add_subcommand("verify", "run seeded self-checks; exit 0 only if all pass");
  CLI::App* cmd_plan =
      app.add_subcommand("plan", "search the best execution plan and print it");
  CLI::App* cmd_bench =
      app.add_subcommand("bench", "measure throughput per admissible input extent (CSV)");
  CLI::App* cmd_speedup =
      app.add_subcommand("speedup", "theoretical speedup vs memory required (CSV)");
  CLI::App* cmd_fov = app.add_subcommand("fov", "print the network's field of view");
  for (CLI::App* sub : {cmd_verify, cmd_plan, cmd_bench, cmd_speedup, cmd_fov})
    sub->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (cmd_fov->parsed()) return run_fov(opt, out);
    if (cmd_plan->parsed()) return run_plan(opt, out, err);
    if (cmd_bench->parsed())
      return opt.precision == 64 ? run_bench<double>(opt, out, err)
                                 : run_bench<float>(opt, out, err);
    if (cmd_speedup->parsed()) return run_speedup(opt, out, err);
    if (cmd_verify->parsed()) return run_verify(opt, out);
    err << "error: no command given\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "parse error in '" << opt.net_path << "': " << e.what() << "\n";
    return kExitUsage;
  } catch (const resource_exhausted& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace vx
