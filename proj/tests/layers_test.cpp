#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "voxin/layers.hpp"
#include "voxin/task_conv.hpp"

using namespace vx;

namespace {

template <class T>
Tensor5<double> conv_oracle(const Tensor5<T>& in, const ConvLayerParams<T>& p) {
  const auto rc = oracle::widen(p);
  const Shape5 sh = in.shape();
  const vec3 no = sh.n - rc.k + vec3{1, 1, 1};
  Tensor5<double> out(Shape5{sh.s, rc.f_out, no});
  std::vector<double> block(static_cast<std::size_t>(sh.f * sh.n.elements()));
  for (i64 s = 0; s < sh.s; ++s) {
    const T* src = in.image(s, 0);
    for (i64 v = 0; v < static_cast<i64>(block.size()); ++v) block[static_cast<std::size_t>(v)] = static_cast<double>(src[v]);
    const auto res = oracle::conv_layer_ref(block, sh.f, sh.n, rc.w, rc.bias, rc.f_out, rc.k, rc.relu);
    std::copy(res.begin(), res.end(), out.image(s, 0));
  }
  return out;
}

template <class T>
Tensor5<T> make_random(Shape5 sh, std::mt19937_64& g) {
  Tensor5<T> t(sh);
  oracle::fill_uniform(t, g);
  return t;
}

Tensor5<double> line_tensor(std::vector<double> v) {
  const i64 n = static_cast<i64>(v.size());
  return Tensor5<double>(Shape5{1, 1, {1, 1, n}}, std::move(v));
}

}  // namespace

// ---- pooling ----------------------------------------------------------------

TEST_CASE("plain max pooling: pinned line, divisibility, constants") {
  LayerContext<double> ctx;
  auto r = max_pool(line_tensor({1, 5, 3, 2, 9, 0}), vec3{1, 1, 2}, ctx);
  REQUIRE(r.output.shape().n == vec3{1, 1, 3});
  CHECK(r.output.data()[0] == 5.0);
  CHECK(r.output.data()[1] == 3.0);
  CHECK(r.output.data()[2] == 9.0);

  auto g = oracle::rng(31);
  Tensor5<double> c(Shape5{1, 2, {6, 6, 6}});
  for (i64 i = 0; i < c.size(); ++i) c.data()[i] = 4.25;
  auto rc = max_pool(std::move(c), vec3{2, 2, 2}, ctx);
  CHECK(rc.output.shape().n == vec3{3, 3, 3});
  for (i64 i = 0; i < rc.output.size(); ++i) CHECK(rc.output.data()[i] == 4.25);

  Tensor5<double> odd(Shape5{1, 1, {5, 4, 4}});
  CHECK_THROWS_AS(max_pool(std::move(odd), vec3{2, 2, 2}, ctx), std::invalid_argument);

  Tensor5<double> nan_in(Shape5{1, 1, {2, 2, 2}});
  nan_in.data()[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(max_pool(std::move(nan_in), vec3{1, 1, 1}, ctx), std::invalid_argument);
  (void)g;
}

TEST_CASE("fragment pooling: pinned line, shape, offsets") {
  LayerContext<double> ctx;
  auto r = mpf_pool(line_tensor({1, 5, 3, 2, 9}), vec3{1, 1, 2}, ctx);
  REQUIRE(r.output.shape().s == 2);
  REQUIRE(r.output.shape().n == vec3{1, 1, 2});
  CHECK(r.output.at(0, 0, 0, 0, 0) == 5.0);  // offset 0 pools [1,5] and [3,2]
  CHECK(r.output.at(0, 0, 0, 0, 1) == 3.0);
  CHECK(r.output.at(1, 0, 0, 0, 0) == 5.0);  // offset 1 pools [5,3] and [2,9]
  CHECK(r.output.at(1, 0, 0, 0, 1) == 9.0);

  auto g = oracle::rng(32);
  auto in = make_random<double>(Shape5{1, 2, {5, 5, 5}}, g);
  Tensor5<double> keep = in;
  auto rr = mpf_pool(std::move(in), vec3{2, 2, 2}, ctx);
  REQUIRE(rr.output.shape() == Shape5{8, 2, {2, 2, 2}});

  // each fragment is the plain pooling of the input cropped at its offset;
  // fragments are ordered lexicographically by offset, batch-major
  for (i64 off = 0; off < 8; ++off) {
    const i64 ox = off / 4, oy = (off / 2) % 2, oz = off % 2;
    for (i64 f = 0; f < 2; ++f)
      for (i64 x = 0; x < 2; ++x)
        for (i64 y = 0; y < 2; ++y)
          for (i64 z = 0; z < 2; ++z) {
            double m = -1e300;
            for (i64 qx = 0; qx < 2; ++qx)
              for (i64 qy = 0; qy < 2; ++qy)
                for (i64 qz = 0; qz < 2; ++qz)
                  m = std::max(m, keep.at(0, f, ox + 2 * x + qx, oy + 2 * y + qy, oz + 2 * z + qz));
            CHECK(rr.output.at(off, f, x, y, z) == m);
          }
  }

  Tensor5<double> bad(Shape5{1, 1, {4, 5, 5}});
  CHECK_THROWS_AS(mpf_pool(std::move(bad), vec3{2, 2, 2}, ctx), std::invalid_argument);

  // window 1 is the identity
  auto same = mpf_pool(Tensor5<double>(keep), vec3{1, 1, 1}, ctx);
  CHECK(oracle::bitwise_equal(same.output, keep));
}

TEST_CASE("fragment recombination: pinned interleave and identity") {
  Tensor5<double> frags(Shape5{2, 1, {1, 1, 2}});
  frags.at(0, 0, 0, 0, 0) = 1;  // fragment a b
  frags.at(0, 0, 0, 0, 1) = 2;
  frags.at(1, 0, 0, 0, 0) = 3;  // fragment c d
  frags.at(1, 0, 0, 0, 1) = 4;
  auto dense = recombine_fragments(frags, {vec3{1, 1, 2}}, 1);
  REQUIRE(dense.shape() == Shape5{1, 1, {1, 1, 4}});
  CHECK(dense.data()[0] == 1.0);
  CHECK(dense.data()[1] == 3.0);
  CHECK(dense.data()[2] == 2.0);
  CHECK(dense.data()[3] == 4.0);

  auto g = oracle::rng(33);
  auto t = make_random<double>(Shape5{3, 2, {2, 3, 4}}, g);
  auto same = recombine_fragments(t, {}, 3);
  CHECK(oracle::bitwise_equal(same, t));

  CHECK_THROWS_AS(recombine_fragments(t, {vec3{2, 2, 2}}, 3), std::invalid_argument);
}

TEST_CASE("fragment pooling plus recombination equals the dense max filter") {
  auto g = oracle::rng(34);
  const vec3 n{5, 5, 5}, p{2, 2, 2};
  auto in = make_random<double>(Shape5{2, 2, n}, g);
  Tensor5<double> keep = in;

  LayerContext<double> ctx;
  auto frag = mpf_pool(std::move(in), p, ctx);
  auto dense = recombine_fragments(frag.output, {p}, 2);
  const vec3 extent = dense.shape().n;
  REQUIRE(extent == vec3{4, 4, 4});

  for (i64 s = 0; s < 2; ++s)
    for (i64 f = 0; f < 2; ++f)
      for (i64 x = 0; x < extent.x; ++x)
        for (i64 y = 0; y < extent.y; ++y)
          for (i64 z = 0; z < extent.z; ++z) {
            double m = -1e300;
            for (i64 qx = 0; qx < p.x; ++qx)
              for (i64 qy = 0; qy < p.y; ++qy)
                for (i64 qz = 0; qz < p.z; ++qz)
                  m = std::max(m, keep.at(s, f, x + qx, y + qy, z + qz));
            CHECK(dense.at(s, f, x, y, z) == m);
          }
}

// ---- direct convolution -------------------------------------------------------

TEST_CASE("direct convolution: scalar kernel, delta kernel, oracle") {
  auto g = oracle::rng(41);
  LayerContext<double> ctx;

  auto in = make_random<double>(Shape5{1, 1, {4, 4, 4}}, g);
  Tensor5<double> keep = in;
  ConvLayerParams<double> doubler;
  doubler.kernels = Tensor5<double>(Shape5{1, 1, {1, 1, 1}});
  doubler.kernels.data()[0] = 2.0;
  doubler.bias = {0.0};
  auto r = conv_direct(std::move(in), doubler, ctx);
  REQUIRE(r.output.shape().n == vec3{4, 4, 4});
  for (i64 i = 0; i < r.output.size(); ++i)
    CHECK(r.output.data()[i] == doctest::Approx(2.0 * keep.data()[i]).epsilon(1e-15));

  ConvLayerParams<double> delta;
  delta.kernels = Tensor5<double>(Shape5{1, 1, {3, 3, 3}});
  delta.kernels.data()[0] = 1.0;  // kernel origin
  delta.bias = {0.0};
  auto in5 = make_random<double>(Shape5{1, 1, {5, 5, 5}}, g);
  Tensor5<double> keep5 = in5;
  auto rd = conv_direct(std::move(in5), delta, ctx);
  REQUIRE(rd.output.shape().n == vec3{3, 3, 3});
  for (i64 x = 0; x < 3; ++x)
    for (i64 y = 0; y < 3; ++y)
      for (i64 z = 0; z < 3; ++z)
        CHECK(rd.output.at(0, 0, x, y, z) == keep5.at(0, 0, x + 2, y + 2, z + 2));

  const auto params = oracle::random_conv<double>(2, 3, vec3{3, 3, 3}, g);
  auto input = make_random<double>(Shape5{2, 3, {6, 6, 6}}, g);
  const auto want = conv_oracle(input, params);
  auto got = conv_direct(Tensor5<double>(input), params, ctx);
  CHECK(oracle::rel_error(got.output.data(), want.data(), want.size()) <= 1e-10);

  // kernel larger than the image
  ConvLayerParams<double> big;
  big.kernels = Tensor5<double>(Shape5{1, 3, {7, 7, 7}});
  big.bias = {0.0};
  CHECK_THROWS_AS(conv_direct(Tensor5<double>(input), big, ctx), std::invalid_argument);
}

TEST_CASE("direct convolution variants are bitwise identical across workers") {
  auto g = oracle::rng(42);
  const auto params = oracle::random_conv<double>(3, 2, vec3{2, 3, 2}, g);
  auto input = make_random<double>(Shape5{2, 2, {6, 5, 6}}, g);

  LayerContext<double> ctx;
  ctx.workers = 1;
  auto a = conv_direct(Tensor5<double>(input), params, ctx, DirectVariant::naive);
  ctx.workers = 3;
  auto b = conv_direct(Tensor5<double>(input), params, ctx, DirectVariant::naive);
  auto c = conv_direct(Tensor5<double>(input), params, ctx, DirectVariant::temp_buffer);
  CHECK(oracle::bitwise_equal(a.output, b.output));
  CHECK(oracle::bitwise_equal(a.output, c.output));
}

// ---- FFT convolution -----------------------------------------------------------

TEST_CASE("FFT data-parallel convolution matches the direct primitive") {
  auto g = oracle::rng(43);
  LayerContext<double> ctx;
  ctx.workers = 2;

  const auto params = oracle::random_conv<double>(2, 2, vec3{3, 3, 3}, g);
  auto input = make_random<double>(Shape5{1, 2, {7, 7, 7}}, g);
  const auto direct = conv_direct(Tensor5<double>(input), params, ctx);
  const auto fft = conv_fft_data_parallel(Tensor5<double>(input), params, ctx);
  CHECK(oracle::rel_error(fft.output.data(), direct.output.data(), direct.output.size()) <= 1e-10);

  LayerContext<float> fctx;
  auto gf = oracle::rng(44);
  const auto fparams = oracle::random_conv<float>(2, 2, vec3{3, 3, 3}, gf);
  auto finput = make_random<float>(Shape5{1, 2, {7, 7, 7}}, gf);
  const auto fdirect = conv_direct(Tensor5<float>(finput), fparams, fctx);
  const auto ffft = conv_fft_data_parallel(Tensor5<float>(finput), fparams, fctx);
  CHECK(oracle::rel_error(ffft.output.data(), fdirect.output.data(), fdirect.output.size()) <=
        1e-6);
}

TEST_CASE("rectified-linear activation clamps negatives after bias") {
  auto g = oracle::rng(45);
  auto id_params = oracle::random_conv<double>(2, 2, vec3{3, 3, 3}, g);
  auto relu_params = id_params;
  relu_params.act = Activation::relu;
  auto input = make_random<double>(Shape5{1, 2, {6, 6, 6}}, g);

  LayerContext<double> ctx;
  const auto plain = conv_fft_data_parallel(Tensor5<double>(input), id_params, ctx);
  const auto clamped = conv_fft_data_parallel(Tensor5<double>(input), relu_params, ctx);

  bool saw_negative = false;
  for (i64 i = 0; i < plain.output.size(); ++i) {
    const double v = plain.output.data()[i];
    saw_negative = saw_negative || v < 0;
    CHECK(clamped.output.data()[i] == std::max(0.0, v));
  }
  CHECK(saw_negative);
}

TEST_CASE("task graph structure") {
  const auto g = TaskGraph::build(4, 5, 4);
  CHECK(g.count(TaskType::input_transform) == 16);
  CHECK(g.count(TaskType::kernel_transform) == 20);
  CHECK(g.count(TaskType::multiply_accumulate) == 80);
  CHECK(g.count(TaskType::output_inverse) == 20);
  CHECK(g.count(TaskType::sync) == 4);
  CHECK_NOTHROW(g.validate());

  for (const auto& dims : std::vector<std::array<i64, 3>>{
           {1, 1, 1}, {2, 3, 4}, {4, 5, 4}, {3, 1, 2}, {1, 6, 2}}) {
    CHECK_NOTHROW(TaskGraph::build(dims[0], dims[1], dims[2]).validate());
  }
  CHECK_THROWS_AS(TaskGraph::build(0, 1, 1), std::invalid_argument);
}

TEST_CASE("FFT task-parallel convolution: oracle agreement and scheduling determinism") {
  auto g = oracle::rng(46);
  const auto params = oracle::random_conv<double>(4, 3, vec3{3, 3, 3}, g);
  auto input = make_random<double>(Shape5{2, 3, {6, 6, 6}}, g);

  LayerContext<double> ctx;
  const auto direct = conv_direct(Tensor5<double>(input), params, ctx);

  std::vector<Tensor5<double>> outs;
  for (i64 workers : {1, 2, 8}) {
    LayerContext<double> tctx;
    tctx.workers = workers;
    auto r = conv_fft_task_parallel(Tensor5<double>(input), params, tctx);
    CHECK(oracle::rel_error(r.output.data(), direct.output.data(), direct.output.size()) <= 1e-10);
    outs.push_back(std::move(r.output));
  }
  CHECK(oracle::bitwise_equal(outs[0], outs[1]));
  CHECK(oracle::bitwise_equal(outs[0], outs[2]));

  LayerContext<double> none;
  none.workers = 0;
  CHECK_THROWS_AS(conv_fft_task_parallel(Tensor5<double>(input), params, none),
                  std::invalid_argument);
}

TEST_CASE("FFT staged convolution: oracle agreement and workspace enforcement") {
  auto g = oracle::rng(47);
  const auto params = oracle::random_conv<double>(3, 2, vec3{3, 3, 3}, g);
  auto input = make_random<double>(Shape5{2, 2, {6, 6, 6}}, g);

  LayerContext<double> ctx;
  ctx.workers = 2;
  const auto direct = conv_direct(Tensor5<double>(input), params, ctx);
  const auto staged = conv_fft_staged(Tensor5<double>(input), params, ctx);
  CHECK(oracle::rel_error(staged.output.data(), direct.output.data(), direct.output.size()) <=
        1e-10);

  LayerContext<double> tiny = ctx;
  tiny.workspace.capacity_scalars = 64;
  CHECK_THROWS_AS(conv_fft_staged(Tensor5<double>(input), params, tiny), resource_exhausted);

  // staging keeps the peak under the sum of the three stage footprints
  const double nt = transformed_real_elements(vec3{6, 6, 6}, ctx.profile);
  const double n = 216, no = 64, S = 2, f = 2, fo = 3;
  const double s1 = S * f * (n + nt) + f * nt;
  const double s2 = S * (f + fo) * nt + 2 * f * nt;
  const double s3 = S * fo * (no + nt) + fo * nt;
  CHECK(staged.audit.peak < s1 + s2 + s3);
  CHECK(staged.audit.model == std::max({s1, s2, s3}));
}

TEST_CASE("all convolution primitives agree pairwise on randomized instances") {
  auto g = oracle::rng(48);
  const struct {
    i64 S, f, fo;
    vec3 n, k;
  } cases[] = {
      {1, 1, 1, {5, 5, 5}, {2, 2, 2}},
      {2, 2, 3, {6, 6, 6}, {3, 3, 3}},
      {1, 3, 2, {7, 6, 5}, {3, 2, 1}},  // anisotropic
      {2, 1, 2, {4, 4, 4}, {4, 4, 4}},  // kernel fills the image
      {1, 2, 2, {8, 8, 8}, {1, 1, 1}},  // pointwise kernel
      {2, 3, 1, {9, 5, 6}, {2, 3, 3}},
  };
  for (const auto& c : cases) {
    const auto params = oracle::random_conv<double>(c.fo, c.f, c.k, g);
    auto input = make_random<double>(Shape5{c.S, c.f, c.n}, g);
    const auto want = conv_oracle(input, params);

    LayerContext<double> ctx;
    ctx.workers = 3;
    std::vector<Tensor5<double>> outs;
    outs.push_back(conv_direct(Tensor5<double>(input), params, ctx, DirectVariant::naive).output);
    outs.push_back(
        conv_direct(Tensor5<double>(input), params, ctx, DirectVariant::temp_buffer).output);
    outs.push_back(conv_fft_data_parallel(Tensor5<double>(input), params, ctx).output);
    outs.push_back(conv_fft_task_parallel(Tensor5<double>(input), params, ctx).output);
    outs.push_back(conv_fft_staged(Tensor5<double>(input), params, ctx).output);

    for (const auto& o : outs) {
      REQUIRE(o.shape() == want.shape());
      CHECK(oracle::rel_error(o.data(), want.data(), want.size()) <= 1e-10);
    }
    for (std::size_t a = 0; a < outs.size(); ++a)
      for (std::size_t b = a + 1; b < outs.size(); ++b)
        CHECK(oracle::rel_error(outs[a].data(), outs[b].data(), outs[a].size()) <= 1e-10);
  }
}

TEST_CASE("convolution layers are linear in the input") {
  auto g = oracle::rng(49);
  auto params = oracle::random_conv<double>(2, 2, vec3{3, 3, 3}, g);
  params.bias = {0.0, 0.0};

  const Shape5 sh{1, 2, {6, 6, 6}};
  auto i1 = make_random<double>(sh, g);
  auto i2 = make_random<double>(sh, g);
  const double a = 0.6, b = -2.2;
  Tensor5<double> mix(sh);
  for (i64 i = 0; i < mix.size(); ++i) mix.data()[i] = a * i1.data()[i] + b * i2.data()[i];

  LayerContext<double> ctx;
  const auto r1 = conv_fft_data_parallel(std::move(i1), params, ctx);
  const auto r2 = conv_fft_data_parallel(std::move(i2), params, ctx);
  const auto rm = conv_fft_data_parallel(std::move(mix), params, ctx);
  std::vector<double> want(static_cast<std::size_t>(rm.output.size()));
  for (i64 i = 0; i < rm.output.size(); ++i)
    want[static_cast<std::size_t>(i)] = a * r1.output.data()[i] + b * r2.output.data()[i];
  CHECK(oracle::rel_error(rm.output.data(), want.data(), rm.output.size()) <= 1e-10);
}

TEST_CASE("audited peaks track the memory models") {
  auto g = oracle::rng(50);
  const auto params = oracle::random_conv<double>(4, 4, vec3{3, 3, 3}, g);
  auto input = make_random<double>(Shape5{1, 4, {8, 8, 8}}, g);

  LayerContext<double> ctx;
  ctx.workers = 2;

  auto check_band = [](const MemoryAudit& a) {
    CHECK(a.peak >= 0.5 * a.model);
    CHECK(a.peak <= 1.15 * a.model);
  };

  check_band(conv_direct(Tensor5<double>(input), params, ctx, DirectVariant::naive).audit);
  check_band(conv_direct(Tensor5<double>(input), params, ctx, DirectVariant::temp_buffer).audit);
  check_band(conv_fft_data_parallel(Tensor5<double>(input), params, ctx).audit);
  check_band(conv_fft_task_parallel(Tensor5<double>(input), params, ctx).audit);
  check_band(conv_fft_staged(Tensor5<double>(input), params, ctx).audit);

  auto pool_in = make_random<double>(Shape5{2, 3, {9, 9, 9}}, g);
  auto rp = max_pool(Tensor5<double>(pool_in), vec3{3, 3, 3}, ctx);
  check_band(rp.audit);
  CHECK(rp.audit.peak == rp.audit.model);
  auto rf = mpf_pool(Tensor5<double>(pool_in), vec3{2, 2, 2}, ctx);
  check_band(rf.audit);
  CHECK(rf.audit.peak == rf.audit.model);
}

TEST_CASE("capped tracker turns over-allocation into resource exhaustion") {
  auto g = oracle::rng(51);
  const auto params = oracle::random_conv<double>(2, 2, vec3{3, 3, 3}, g);
  auto input = make_random<double>(Shape5{1, 2, {6, 6, 6}}, g);

  MemoryTracker cap(100);  // far below the working set
  LayerContext<double> ctx;
  ctx.cap_tracker = &cap;
  CHECK_THROWS_AS(conv_fft_data_parallel(Tensor5<double>(input), params, ctx), resource_exhausted);
  CHECK(cap.current() == 0);  // everything charged was released on unwind

  MemoryTracker roomy(1 << 22);
  ctx.cap_tracker = &roomy;
  auto r = conv_fft_data_parallel(Tensor5<double>(input), params, ctx);
  CHECK(roomy.current() == 0);
  CHECK(roomy.peak() == static_cast<i64>(r.audit.peak));
}

TEST_CASE("two fragment-pooling layers recombine to the sliding-window oracle") {
  auto g = oracle::rng(52);
  const auto c1 = oracle::random_conv<double>(2, 1, vec3{3, 3, 3}, g);
  const auto c2 = oracle::random_conv<double>(1, 2, vec3{3, 3, 3}, g, Activation::relu);

  std::vector<oracle::RefLayer> refnet;
  refnet.push_back({true, oracle::widen(c1), {}});
  refnet.push_back({false, {}, vec3{2, 2, 2}});
  refnet.push_back({true, oracle::widen(c2), {}});
  refnet.push_back({false, {}, vec3{2, 2, 2}});

  const vec3 fov{10, 10, 10};  // conv 3, pool 2, conv 3, pool 2
  auto input = make_random<double>(Shape5{2, 1, {13, 13, 13}}, g);
  const auto want = oracle::sliding_window_ref(input, refnet, fov);

  LayerContext<double> ctx;
  ctx.workers = 2;
  auto a = conv_fft_data_parallel(Tensor5<double>(input), c1, ctx);
  auto b = mpf_pool(std::move(a.output), vec3{2, 2, 2}, ctx);
  auto c = conv_fft_staged(std::move(b.output), c2, ctx);
  auto d = mpf_pool(std::move(c.output), vec3{2, 2, 2}, ctx);
  auto dense = recombine_fragments(d.output, {vec3{2, 2, 2}, vec3{2, 2, 2}}, 2);

  REQUIRE(dense.shape() == want.shape());
  CHECK(oracle::rel_error(dense.data(), want.data(), want.size()) <= 1e-10);
}
