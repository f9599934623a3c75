#include <doctest.h>

#include <array>
#include <cmath>
#include <random>

#include "atom/gradcheck.hpp"
#include "atom/ops.hpp"

using namespace atom;
using Td = Tensor<double>;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

Td random_param(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  return Td::parameter(std::move(shape), random_values(n, rng, lo, hi));
}

// Weighted sum with fixed random weights so every output element matters.
Td weighted_sum(const Td& x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  auto w = Td::from_vector(x.shape(), random_values(static_cast<std::size_t>(x.numel()), rng));
  return sum(mul(x, w));
}

void expect_gradcheck(const std::function<Td()>& f, std::vector<NamedTensor> leaves) {
  const auto report = check_gradients(f, leaves);
  INFO(report.worst);
  CHECK(report.max_rel_error < 1e-4);
}

}  // namespace

TEST_CASE("backward of x*x at 3 is 6") {
  auto x = Td::parameter({}, {3.0});
  auto y = mul(x, x);
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("sum of softmax has zero gradient") {
  std::mt19937_64 rng(1);
  auto v = random_param({7}, rng, -3, 3);
  backward(sum(softmax_last(v)));
  for (double g : v.grad()) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("backward rejects non-scalar roots and tolerates detached graphs") {
  auto x = Td::parameter({2}, {1.0, 2.0});
  CHECK_THROWS_AS(backward(mul(x, x)), TensorError);
  auto c = Td::from_vector({}, {5.0});
  backward(mul(c, c));
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("each node is visited once on a diamond graph") {
  auto x = Td::parameter({}, {2.0});
  auto a = mul(x, x);        // x^2
  auto b = add(a, a);        // 2x^2
  auto c = mul(b, a);        // 2x^4
  backward(c);
  CHECK(x.grad()[0] == doctest::Approx(8.0 * 8.0));  // d(2x^4) = 8x^3 = 64
}

TEST_CASE("gradient accumulation is linear") {
  std::mt19937_64 rng(3);
  auto x = random_param({4, 3}, rng);
  auto f = [&] { return sum(square(tanh(x))); };
  auto g = [&] { return sum(mul(sigmoid(x), x)); };
  backward(f());
  auto gf = std::vector<double>(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(g());
  auto gg = std::vector<double>(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(add(f(), g()));
  for (std::size_t i = 0; i < gf.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(gf[i] + gg[i]).epsilon(1e-12));
}

TEST_CASE("backward is deterministic") {
  std::mt19937_64 rng(4);
  auto w = random_param({5, 6}, rng);
  auto x = Td::from_vector({3, 5}, random_values(15, rng));
  auto run = [&] {
    w.zero_grad();
    backward(sum(gelu(matmul(x, w))));
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  CHECK(run() == run());
}

TEST_CASE("broadcasting is limited to scalars and leading-batch suffixes") {
  auto a = Td::zeros({2, 3});
  CHECK_NOTHROW(add(a, Td::zeros({3})));
  CHECK_NOTHROW(add(a, Td::scalar(1.0)));
  CHECK_NOTHROW(add(Td::zeros({3}), a));
  CHECK_THROWS_AS(add(a, Td::zeros({2})), TensorError);
  CHECK_THROWS_AS(add(a, Td::zeros({2, 1})), TensorError);
}

TEST_CASE("elementwise ops pass finite-difference checks") {
  std::mt19937_64 rng(11);
  auto a = random_param({3, 4}, rng, 0.2, 1.5);
  auto b = random_param({3, 4}, rng, 0.3, 1.2);
  auto row = random_param({4}, rng);
  auto s = random_param({}, rng);
  std::vector<NamedTensor> leaves{{"a", a}, {"b", b}, {"row", row}, {"s", s}};
  SUBCASE("arithmetic") {
    expect_gradcheck([&] { return weighted_sum(div(mul(add(a, row), sub(b, s)), add_scalar(b, 0.5))); }, leaves);
  }
  SUBCASE("transcendental") {
    expect_gradcheck(
        [&] {
          auto x = add(add(exp(neg(a)), log(b)), sqrt(a));
          x = add(x, mul(sin(a), cos(b)));
          x = add(x, add(tanh(a), sigmoid(b)));
          x = add(x, add(softplus(a), gelu(b)));
          x = add(x, mul_scalar(square(a), 0.3));
          return weighted_sum(x);
        },
        leaves);
  }
  SUBCASE("relu away from the kink") {
    auto shifted = [&] { return add_scalar(a, -0.05); };  // a in (0.2, 1.5)
    expect_gradcheck([&] { return weighted_sum(relu(shifted())); }, leaves);
  }
  SUBCASE("rows and cross products") {
    auto m = random_param({5, 3}, rng);
    auto n = random_param({5, 3}, rng);
    auto r = random_param({5}, rng);
    std::vector<NamedTensor> l2{{"m", m}, {"n", n}, {"r", r}};
    expect_gradcheck([&] { return weighted_sum(scale_rows(cross3(m, n), r)); }, l2);
  }
}

TEST_CASE("structural ops pass finite-difference checks") {
  std::mt19937_64 rng(12);
  auto a = random_param({4, 3}, rng);
  auto b = random_param({3, 5}, rng);
  auto c = random_param({4, 2}, rng);
  auto t = random_param({2, 3, 4}, rng);
  std::vector<NamedTensor> leaves{{"a", a}, {"b", b}, {"c", c}, {"t", t}};
  const std::vector<std::int64_t> rows{2, 0, 2, 3};
  expect_gradcheck(
      [&] {
        auto prod = matmul(a, b);                                   // [4, 5]
        std::array<Td, 2> parts{prod, c};
        auto cat = concat_last(std::span<const Td>(parts));          // [4, 7]
        auto sm = softmax_last(slice_last(cat, 1, 5));               // [4, 5]
        auto gathered = gather_rows(sm, rows);                       // [4, 5]
        auto scattered = scatter_rows(gathered, rows, 6);           // [6, 5]
        const std::array<std::size_t, 3> order{2, 0, 1};
        auto perm = permute(t, std::span<const std::size_t>(order));  // [4, 2, 3]
        auto sel = select_first(reshape(perm, {4, 6}), 1);          // [6]
        auto tr = transpose(a);                                      // [3, 4]
        return add(add(weighted_sum(scattered), weighted_sum(sum_last(tr))),
                   add(weighted_sum(sel), mean(square(b))));
      },
      leaves);
}

TEST_CASE("conv2d passes finite-difference checks") {
  std::mt19937_64 rng(13);
  auto x = random_param({2, 4, 5, 6}, rng);
  auto grouped = random_param({6, 2, 3, 3}, rng);
  auto depthwise = random_param({4, 1, 5, 5}, rng);
  auto bias = random_param({6}, rng);
  std::vector<NamedTensor> leaves{{"x", x}, {"grouped", grouped}, {"depthwise", depthwise}, {"bias", bias}};
  expect_gradcheck(
      [&] {
        return add(weighted_sum(add_channel_bias(conv2d(x, grouped, 2, 1), bias)),
                   weighted_sum(conv2d(x, depthwise, 4, 2)));
      },
      leaves);
}

TEST_CASE("conv2d examples") {
  SUBCASE("unit 1x1 kernel is the identity") {
    std::mt19937_64 rng(5);
    auto x = Td::from_vector({1, 1, 4, 4}, random_values(16, rng));
    auto y = conv2d(x, Td::full({1, 1, 1, 1}, 1.0), 1, 0);
    CHECK(y.to_vector() == x.to_vector());
  }
  SUBCASE("averaging kernel keeps constant interiors") {
    auto x = Td::full({1, 1, 5, 5}, 2.5);
    auto y = conv2d(x, Td::full({1, 1, 3, 3}, 1.0 / 9.0), 1, 1);
    REQUIRE(y.shape() == Shape{1, 1, 5, 5});
    for (int r = 1; r < 4; ++r)
      for (int c = 1; c < 4; ++c) CHECK(y.data()[r * 5 + c] == doctest::Approx(2.5).epsilon(1e-14));
  }
  SUBCASE("matches a direct nested-loop cross-correlation") {
    std::mt19937_64 rng(6);
    const auto in = random_values(25, rng);
    const auto k = random_values(9, rng);
    auto y = conv2d(Td::from_vector({1, 1, 5, 5}, in), Td::from_vector({1, 1, 3, 3}, k), 1, 1);
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c) {
        double expected = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int rr = r + dy, cc = c + dx;
            if (rr < 0 || rr >= 5 || cc < 0 || cc >= 5) continue;
            expected += in[rr * 5 + cc] * k[(dy + 1) * 3 + (dx + 1)];
          }
        CHECK(y.data()[r * 5 + c] == doctest::Approx(expected).epsilon(1e-13));
      }
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(conv2d(Td::zeros({1, 3, 4, 4}), Td::zeros({2, 2, 3, 3}), 2, 1), TensorError);
    CHECK_THROWS_AS(conv2d(Td::zeros({1, 2, 4, 4}), Td::zeros({2, 2, 2, 2}), 1, 1), TensorError);
  }
}

TEST_CASE("interp_bilinear examples") {
  std::mt19937_64 rng(8);
  const auto texels = random_values(2 * 4 * 4, rng);
  auto plane = Td::from_vector({2, 4, 4}, texels);
  SUBCASE("texel centers reproduce texels") {
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        auto coords = Td::from_vector({1, 2}, {-1.0 + 2.0 * i / 3.0, -1.0 + 2.0 * j / 3.0});
        auto out = interp_bilinear(plane, coords);
        for (int c = 0; c < 2; ++c) CHECK(out.data()[c] == doctest::Approx(texels[c * 16 + i * 4 + j]).epsilon(1e-12));
      }
  }
  SUBCASE("midpoint between 0 and 1 is one half") {
    auto p = Td::from_vector({1, 2, 2}, {0.0, 1.0, 0.0, 1.0});
    auto out = interp_bilinear(p, Td::from_vector({1, 2}, {0.3, 0.0}));
    CHECK(out.item() == doctest::Approx(0.5));
  }
  SUBCASE("random coordinates match the closed-form blend") {
    for (int trial = 0; trial < 50; ++trial) {
      const auto uv = random_values(2, rng, -1.3, 1.3);
      auto out = interp_bilinear(plane, Td::from_vector({1, 2}, uv));
      // Continuous texel coordinates, clamped to the border.
      const double fy = std::clamp((uv[0] + 1.0) * 1.5, 0.0, 3.0);
      const double fx = std::clamp((uv[1] + 1.0) * 1.5, 0.0, 3.0);
      const int y0 = std::min(2, static_cast<int>(fy)), x0 = std::min(2, static_cast<int>(fx));
      const double ty = fy - y0, tx = fx - x0;
      for (int c = 0; c < 2; ++c) {
        auto at = [&](int y, int x) { return texels[c * 16 + y * 4 + x]; };
        const double expected = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1)) +
                                ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
        CHECK(out.data()[c] == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }
  SUBCASE("NaN coordinates are rejected") {
    CHECK_THROWS_AS(interp_bilinear(plane, Td::from_vector({1, 2}, {std::nan(""), 0.0})), TensorError);
  }
}

TEST_CASE("interp_bilinear and its coordinate VJP pass finite-difference checks") {
  std::mt19937_64 rng(9);
  auto plane = random_param({3, 5, 4}, rng);
  // Keep samples away from texel boundaries and the clamp edge.
  std::vector<double> uv;
  for (int n = 0; n < 6; ++n) {
    uv.push_back(-1.0 + (2.0 / 4.0) * (n % 4 + 0.2 + 0.6 * std::uniform_real_distribution<>(0, 1)(rng)));
    uv.push_back(-1.0 + (2.0 / 3.0) * (n % 3 + 0.2 + 0.6 * std::uniform_real_distribution<>(0, 1)(rng)));
  }
  auto coords = Td::parameter({6, 2}, uv);
  auto cot = random_param({6, 3}, rng);
  std::vector<NamedTensor> leaves{{"plane", plane}, {"coords", coords}};
  expect_gradcheck([&] { return weighted_sum(interp_bilinear(plane, coords)); }, leaves);

  auto fixed = Td::from_vector({6, 2}, uv);
  std::vector<NamedTensor> vjp_leaves{{"plane", plane}, {"cot", cot}};
  expect_gradcheck([&] { return weighted_sum(interp_bilinear_coord_vjp(plane, fixed, cot)); }, vjp_leaves);

  // The VJP equals the coordinate gradient of <cot, interp>.
  coords.zero_grad();
  backward(sum(mul(interp_bilinear(plane, coords), cot.detach())));
  auto vjp = interp_bilinear_coord_vjp(plane, fixed, cot);
  for (int i = 0; i < 12; ++i) CHECK(vjp.data()[i] == doctest::Approx(coords.grad()[i]).epsilon(1e-12));
}

TEST_CASE("inject_gradient passes the supplied gradient through") {
  auto x = Td::parameter({3}, {1.0, -2.0, 0.5});
  const std::array<double, 3> g{0.1, 0.2, -0.3};
  auto root = inject_gradient(x, std::span<const double>(g));
  CHECK(root.item() == doctest::Approx(0.5 * (0.01 + 0.04 + 0.09)));
  backward(root);
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(g[i]));
}

TEST_CASE("no-grad mode records nothing") {
  auto x = Td::parameter({2}, {1.0, 2.0});
  NoGradGuard guard;
  auto y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}
