#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <variant>
#include <vector>

#include "oracles.hpp"
#include "voxin/execute.hpp"

using namespace vx;

namespace {

// conv(f1, 3x3x3, relu) -> pool 2 -> conv(f2, 3x3x3); field of view 8
NetworkSpec cpc_net(i64 f1, i64 f2) {
  NetworkSpec net;
  net.features_in = 1;
  net.layers.push_back(ConvSpec{f1, vec3::cube(3), Activation::relu});
  net.layers.push_back(PoolSpec{vec3::cube(2), std::nullopt});
  net.layers.push_back(ConvSpec{f2, vec3::cube(3), Activation::identity});
  return net;
}

NetworkSpec single_conv(i64 f_in, i64 f_out, i64 k) {
  NetworkSpec net;
  net.features_in = f_in;
  net.layers.push_back(ConvSpec{f_out, vec3::cube(k), Activation::identity});
  return net;
}

template <class T>
std::vector<oracle::RefLayer> ref_net(const NetworkSpec& net, const NetworkWeights<T>& w) {
  std::vector<oracle::RefLayer> out;
  std::size_t c = 0;
  for (const auto& l : net.layers) {
    oracle::RefLayer rl;
    if (std::holds_alternative<ConvSpec>(l)) {
      rl.is_conv = true;
      rl.conv = oracle::widen(w.convs[c++]);
    } else {
      rl.is_conv = false;
      rl.pool = std::get<PoolSpec>(l).window;
    }
    out.push_back(rl);
  }
  return out;
}

template <class T>
Tensor5<T> random_input(const Shape5& sh, std::uint64_t seed) {
  Tensor5<T> t(sh);
  auto g = oracle::rng(seed);
  oracle::fill_uniform(t, g);
  return t;
}

DeviceModel generous_device() {
  DeviceModel d;  // defaults: infinite capacity, 1e11 flop/s, 2e9 scalars/s
  return d;
}

}  // namespace

TEST_CASE("random_weights: deterministic, correctly shaped, bounded") {
  NetworkSpec net;
  net.features_in = 2;
  net.layers.push_back(ConvSpec{3, vec3{2, 3, 1}, Activation::relu});
  net.layers.push_back(PoolSpec{vec3::cube(2), std::nullopt});
  net.layers.push_back(ConvSpec{1, vec3::cube(1), Activation::identity});

  const auto w1 = random_weights<float>(net, 7);
  const auto w2 = random_weights<float>(net, 7);
  const auto w3 = random_weights<float>(net, 8);

  REQUIRE(w1.convs.size() == 2);
  CHECK(w1.convs[0].kernels.shape() == Shape5{3, 2, vec3{2, 3, 1}});
  CHECK(w1.convs[0].act == Activation::relu);
  CHECK(w1.convs[1].kernels.shape() == Shape5{1, 3, vec3::cube(1)});
  CHECK(w1.convs[1].act == Activation::identity);
  w1.validate(net);

  // same seed reproduces bitwise; a different seed diverges somewhere
  CHECK(oracle::bitwise_equal(w1.convs[0].kernels, w2.convs[0].kernels));
  CHECK(oracle::bitwise_equal(w1.convs[1].kernels, w2.convs[1].kernels));
  CHECK(w1.convs[0].bias == w2.convs[0].bias);
  CHECK(!oracle::bitwise_equal(w1.convs[0].kernels, w3.convs[0].kernels));

  const double bound0 = std::sqrt(3.0 / (2.0 * 6.0));
  for (i64 i = 0; i < w1.convs[0].kernels.size(); ++i)
    CHECK(std::abs(static_cast<double>(w1.convs[0].kernels.data()[i])) <= bound0);
  for (float b : w1.convs[0].bias) CHECK(std::abs(static_cast<double>(b)) <= 0.1);
}

TEST_CASE("execute_plan: host fragment plan equals the sliding-window oracle") {
  const NetworkSpec net = cpc_net(2, 3);
  HostModel host;  // generous capacity
  SearchBounds bounds;
  bounds.max_extent = 9;
  const PlanOutcome best = optimize_plan(net, host, bounds);
  REQUIRE(best.feasible());
  REQUIRE(best.plan->input == Shape5{1, 1, vec3::cube(9)});  // only e=9 admits the pool

  const auto weights = random_weights<double>(net, 11);
  const Tensor5<double> input = random_input<double>(best.plan->input, 21);

  ExecutionEnv<double> env;
  env.workers = 2;
  auto [dense, rep] = execute_plan(*best.plan, net, weights, Tensor5<double>(input), env);

  REQUIRE(dense.shape() == Shape5{1, 3, vec3::cube(2)});
  const auto ref = oracle::sliding_window_ref(input, ref_net(net, weights), vec3::cube(8));
  REQUIRE(ref.shape() == dense.shape());
  CHECK(oracle::rel_error(dense.data(), ref.data(), dense.size()) <= 1e-12);

  CHECK(rep.voxels == 8.0);  // batch 8 fragments, one voxel each
  CHECK(rep.seconds > 0.0);
  CHECK(rep.voxels_per_second == doctest::Approx(rep.voxels / rep.seconds));
  CHECK(rep.layer_seconds.size() == 3);
  CHECK(rep.transfer_seconds == 0.0);
  CHECK(rep.host_peak > 0.0);
  CHECK(rep.device_peak == 0.0);
}

TEST_CASE("execute_plan: plain-pool plan matches the strided oracle positions") {
  NetworkSpec net = cpc_net(2, 2);
  std::get<PoolSpec>(net.layers[1]).forced_mode = PoolMode::plain;
  HostModel host;
  SearchBounds bounds;
  bounds.max_extent = 12;
  const PlanOutcome best = optimize_plan(net, host, bounds);
  REQUIRE(best.feasible());
  REQUIRE(best.plan->input.n == vec3::cube(12));  // largest even-propagating extent

  const auto weights = random_weights<double>(net, 5);
  const Tensor5<double> input = random_input<double>(best.plan->input, 6);
  ExecutionEnv<double> env;
  auto [out, rep] = execute_plan(*best.plan, net, weights, Tensor5<double>(input), env);

  REQUIRE(out.shape() == Shape5{1, 2, vec3::cube(3)});
  CHECK(rep.voxels == 27.0);

  // a plain pool computes the stride-2 subset of the dense sliding window
  const auto ref = oracle::sliding_window_ref(input, ref_net(net, weights), vec3::cube(8));
  double maxrel = 0;
  for (i64 j = 0; j < 2; ++j)
    for (i64 x = 0; x < 3; ++x)
      for (i64 y = 0; y < 3; ++y)
        for (i64 z = 0; z < 3; ++z) {
          const double got = out.at(0, j, x, y, z);
          const double want = ref.at(0, j, 2 * x, 2 * y, 2 * z);
          maxrel = std::max(maxrel, std::abs(got - want) / std::max(1e-300, std::abs(want)));
        }
  CHECK(maxrel <= 1e-12);
}

TEST_CASE("execute_plan: every split of the same network produces the same output") {
  const NetworkSpec net = cpc_net(2, 3);
  HostModel host;
  const DeviceModel device = generous_device();
  const Shape5 input_sh{1, 1, vec3::cube(9)};
  const std::vector<PoolMode> modes{PoolMode::fragments};

  const auto weights = random_weights<double>(net, 13);
  const Tensor5<double> input = random_input<double>(input_sh, 17);

  ExecutionEnv<double> env;
  env.device = device;

  std::vector<Tensor5<double>> outs;
  for (i64 theta : {0, 1, 2, 3}) {
    const PlanOutcome po = split_plan(net, host, input_sh, modes, device, theta);
    REQUIRE(po.feasible());
    auto [dense, rep] = execute_plan(*po.plan, net, weights, Tensor5<double>(input), env);
    if (theta < 3) {
      CHECK(rep.device_peak > 0.0);
      CHECK(rep.transfer_seconds > 0.0);
    }
    outs.push_back(std::move(dense));
  }
  for (std::size_t i = 1; i < outs.size(); ++i) {
    REQUIRE(outs[i].shape() == outs[0].shape());
    CHECK(oracle::rel_error(outs[i].data(), outs[0].data(), outs[i].size()) <= 1e-12);
  }
}

TEST_CASE("execute_plan: suffix sub-batch size never changes the result bitwise") {
  const NetworkSpec net = cpc_net(2, 1);
  HostModel host;
  const DeviceModel device = generous_device();
  const std::vector<PoolMode> modes{PoolMode::fragments};
  const auto weights = random_weights<double>(net, 19);

  ExecutionEnv<double> env;
  env.device = device;

  SUBCASE("chunking a fragment batch of 8 after theta = 2") {
    const Shape5 input_sh{1, 1, vec3::cube(9)};
    const Tensor5<double> input = random_input<double>(input_sh, 23);
    const PlanOutcome po = split_plan(net, host, input_sh, modes, device, 2);
    REQUIRE(po.feasible());
    REQUIRE(po.plan->device_sub_batch == 8);  // everything fits: one chunk

    auto [whole, r1] = execute_plan(*po.plan, net, weights, Tensor5<double>(input), env);
    for (i64 sb : {1, 2, 3}) {  // 3 exercises a remainder chunk (8 = 3+3+2)
      ExecutionPlan chunked = *po.plan;
      chunked.device_sub_batch = sb;
      auto [out, r2] = execute_plan(chunked, net, weights, Tensor5<double>(input), env);
      CHECK(oracle::bitwise_equal(out, whole));
    }
  }

  SUBCASE("chunking across a fragment pool inside the suffix") {
    const Shape5 input_sh{2, 1, vec3::cube(9)};
    const Tensor5<double> input = random_input<double>(input_sh, 29);
    const PlanOutcome po = split_plan(net, host, input_sh, modes, device, 1);
    REQUIRE(po.feasible());
    REQUIRE(po.plan->device_sub_batch == 2);

    auto [whole, r1] = execute_plan(*po.plan, net, weights, Tensor5<double>(input), env);
    ExecutionPlan chunked = *po.plan;
    chunked.device_sub_batch = 1;
    auto [out, r2] = execute_plan(chunked, net, weights, Tensor5<double>(input), env);
    CHECK(oracle::bitwise_equal(out, whole));
  }
}

TEST_CASE("execute_plan: host memory cap is enforced exactly for a direct plan") {
  const NetworkSpec net = single_conv(1, 1, 3);
  HostModel host;
  host.env.capacity = 50;  // admits only the direct rows at extent 3
  SearchBounds bounds;
  bounds.max_extent = 3;
  const PlanOutcome best = optimize_plan(net, host, bounds);
  REQUIRE(best.feasible());
  REQUIRE(best.plan->layers[0].kind == PrimitiveKind::direct_naive);
  REQUIRE(best.plan->host_peak == 28.0);

  const auto weights = random_weights<double>(net, 3);
  const Tensor5<double> input = random_input<double>(best.plan->input, 4);

  ExecutionEnv<double> env;
  env.host_capacity = 28;  // exactly the modeled working set
  auto [out, rep] = execute_plan(*best.plan, net, weights, Tensor5<double>(input), env);
  CHECK(rep.host_peak == 28.0);

  env.host_capacity = 27;
  CHECK_THROWS_AS(execute_plan(*best.plan, net, weights, Tensor5<double>(input), env),
                  resource_exhausted);
}

TEST_CASE("execute_plan: device memory cap is enforced at run time") {
  const NetworkSpec net = single_conv(1, 1, 3);
  HostModel host;
  const DeviceModel plan_device = generous_device();
  const Shape5 input_sh{1, 1, vec3::cube(5)};
  const PlanOutcome po = split_plan(net, host, input_sh, {}, plan_device, 0);
  REQUIRE(po.feasible());

  const auto weights = random_weights<double>(net, 31);
  const Tensor5<double> input = random_input<double>(input_sh, 37);

  ExecutionEnv<double> env;
  env.device = plan_device;
  env.device->env.capacity = 152;  // input 125 + output 27
  auto [out, rep] = execute_plan(*po.plan, net, weights, Tensor5<double>(input), env);
  CHECK(rep.device_peak == 152.0);
  CHECK(rep.transfer_seconds == doctest::Approx(152.0 / 2e9).epsilon(1e-12));
  CHECK(rep.seconds >= rep.transfer_seconds);

  env.device->env.capacity = 151;
  CHECK_THROWS_AS(execute_plan(*po.plan, net, weights, Tensor5<double>(input), env),
                  resource_exhausted);
}

TEST_CASE("execute_plan: real transfer sleeps stretch the measured wall time") {
  const NetworkSpec net = single_conv(1, 1, 3);
  HostModel host;
  DeviceModel device = generous_device();
  device.transfer_rate = 5000;  // 152 scalars -> 30.4 ms of modeled transfer
  const Shape5 input_sh{1, 1, vec3::cube(5)};
  const PlanOutcome po = split_plan(net, host, input_sh, {}, device, 0);
  REQUIRE(po.feasible());

  const auto weights = random_weights<double>(net, 41);
  const Tensor5<double> input = random_input<double>(input_sh, 43);

  ExecutionEnv<double> env;
  env.device = device;
  env.real_transfer_sleep = true;
  auto [out, rep] = execute_plan(*po.plan, net, weights, Tensor5<double>(input), env);
  const double modeled = 152.0 / 5000.0;
  CHECK(rep.transfer_seconds == doctest::Approx(modeled).epsilon(1e-12));
  CHECK(rep.seconds >= 0.9 * modeled);  // the sleeps really happened
}

TEST_CASE("execute_plan: offloaded prefix convolution accumulates its divisions") {
  const NetworkSpec net = single_conv(6, 4, 3);
  HostModel host;
  host.flop_rate = 1.0;  // host compute priced out, the device takes the layer
  DeviceModel device = generous_device();
  device.env.capacity = 4024;  // admits (1,3,2) slices of the 10^3 instance
  const Shape5 input_sh{1, 6, vec3::cube(10)};
  const PlanOutcome po = split_plan(net, host, input_sh, {}, device, 1);
  REQUIRE(po.feasible());
  REQUIRE(po.plan->layers[0].on_device);
  REQUIRE(po.plan->layers[0].divisions.size() == 4);

  const auto weights = random_weights<double>(net, 47);
  const Tensor5<double> input = random_input<double>(input_sh, 53);

  ExecutionEnv<double> env;
  env.device = device;
  auto [out, rep] = execute_plan(*po.plan, net, weights, Tensor5<double>(input), env);
  CHECK(rep.device_peak == 4024.0);
  CHECK(rep.host_peak >= 6000.0 + 4.0 * 512.0);  // staged input + output

  // independent reference of the full layer
  std::vector<double> in_flat(input.data(), input.data() + input.size());
  std::vector<double> w_flat(weights.convs[0].kernels.data(),
                             weights.convs[0].kernels.data() + weights.convs[0].kernels.size());
  std::vector<double> b_flat(weights.convs[0].bias.begin(), weights.convs[0].bias.end());
  const auto ref =
      oracle::conv_layer_ref(in_flat, 6, vec3::cube(10), w_flat, b_flat, 4, vec3::cube(3), false);
  REQUIRE(out.size() == static_cast<i64>(ref.size()));
  CHECK(oracle::rel_error(out.data(), ref.data(), out.size()) <= 1e-12);
}

TEST_CASE("pipeline_execute: outputs equal the serial execution, item for item") {
  const NetworkSpec net = cpc_net(2, 1);
  HostModel host;
  const DeviceModel device = generous_device();
  const Shape5 input_sh{1, 1, vec3::cube(9)};
  const PlanOutcome po = split_plan(net, host, input_sh, {PoolMode::fragments}, device, 1);
  REQUIRE(po.feasible());

  const auto weights = random_weights<double>(net, 59);
  std::vector<Tensor5<double>> items;
  for (int i = 0; i < 4; ++i) items.push_back(random_input<double>(input_sh, 60 + i));

  ExecutionEnv<double> env;
  env.device = device;
  auto [pipe_outs, pipe_rep] =
      pipeline_execute(*po.plan, net, weights, std::vector<Tensor5<double>>(items), env);
  auto [serial_outs, serial_rep] =
      serial_execute(*po.plan, net, weights, std::vector<Tensor5<double>>(items), env);

  REQUIRE(pipe_outs.size() == 4);
  REQUIRE(serial_outs.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(oracle::bitwise_equal(pipe_outs[i], serial_outs[i]));
  CHECK(pipe_rep.voxels == 4.0 * 8.0);
  CHECK(serial_rep.voxels == 4.0 * 8.0);
  CHECK(pipe_rep.layer_seconds.size() == 3);
}

TEST_CASE("measure_throughput: median-of-five report is internally consistent") {
  const NetworkSpec net = cpc_net(1, 1);
  HostModel host;
  SearchBounds bounds;
  bounds.max_extent = 9;
  const PlanOutcome best = optimize_plan(net, host, bounds);
  REQUIRE(best.feasible());

  const auto weights = random_weights<float>(net, 61);
  const Tensor5<float> input = random_input<float>(best.plan->input, 67);
  ExecutionEnv<float> env;
  const ThroughputReport rep = measure_throughput(*best.plan, net, weights, input, env);
  CHECK(rep.voxels == 8.0);
  CHECK(rep.seconds > 0.0);
  CHECK(rep.voxels_per_second == doctest::Approx(rep.voxels / rep.seconds));
}

TEST_CASE("execute_plan: argument validation") {
  const NetworkSpec net = cpc_net(1, 1);
  HostModel host;
  SearchBounds bounds;
  bounds.max_extent = 9;
  const PlanOutcome best = optimize_plan(net, host, bounds);
  REQUIRE(best.feasible());
  const auto weights = random_weights<double>(net, 71);
  ExecutionEnv<double> env;

  // wrong input shape
  CHECK_THROWS_AS(execute_plan(*best.plan, net, weights,
                               random_input<double>(Shape5{1, 1, vec3::cube(8)}, 1), env),
                  std::invalid_argument);

  // wrong weight count
  NetworkWeights<double> bad;
  bad.convs.push_back(weights.convs[0]);
  CHECK_THROWS_AS(execute_plan(*best.plan, net, bad,
                               random_input<double>(best.plan->input, 1), env),
                  std::invalid_argument);

  // a device plan without a device model
  const PlanOutcome dev_plan =
      split_plan(net, host, Shape5{1, 1, vec3::cube(9)}, {PoolMode::fragments},
                 generous_device(), 0);
  REQUIRE(dev_plan.feasible());
  CHECK_THROWS_AS(execute_plan(*dev_plan.plan, net, weights,
                               random_input<double>(Shape5{1, 1, vec3::cube(9)}, 1), env),
                  std::invalid_argument);
}
