#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "atom/field.hpp"
#include "atom/gradcheck.hpp"
#include "atom/ops.hpp"

using namespace atom;
using Td = Tensor<double>;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

void fill(Td& t, std::mt19937_64& rng, double scale) {
  auto v = random_values(static_cast<std::size_t>(t.numel()), rng, -scale, scale);
  std::copy(v.begin(), v.end(), t.mutable_data().begin());
}

void randomize(Mlp<double>& m, std::mt19937_64& rng, double scale) {
  for (auto* t : {&m.w1, &m.b1, &m.w2, &m.b2, &m.w3, &m.b3}) fill(*t, rng, scale);
}

// Border-clamped bilinear sample of one channel of an R x R grid at (u, v) in [-1, 1].
double bilinear_oracle(const std::vector<double>& grid, int r, double u, double v) {
  const double fy = std::clamp((u + 1.0) * 0.5 * (r - 1), 0.0, double(r - 1));
  const double fx = std::clamp((v + 1.0) * 0.5 * (r - 1), 0.0, double(r - 1));
  const int y0 = std::min(r - 2, int(fy)), x0 = std::min(r - 2, int(fx));
  const double ty = fy - y0, tx = fx - x0;
  auto at = [&](int y, int x) { return grid[static_cast<std::size_t>(y * r + x)]; };
  return (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1)) + ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
}

Triplane<double> random_triplane(int c, int r, std::mt19937_64& rng, double scale, bool param = false) {
  auto v = random_values(static_cast<std::size_t>(3 * c * r * r), rng, -scale, scale);
  return {param ? Td::parameter({3 * c, r, r}, v) : Td::from_vector({3 * c, r, r}, v), c, r};
}

}  // namespace

TEST_CASE("posenc examples") {
  const auto z = posenc(Td::zeros({1, 3}), 6).to_vector();
  REQUIRE(z.size() == 39);
  for (int a = 0; a < 3; ++a) CHECK(z[static_cast<std::size_t>(a)] == 0.0);
  for (int k = 0; k < 6; ++k)
    for (int a = 0; a < 3; ++a) {
      CHECK(z[static_cast<std::size_t>(3 + 6 * k + a)] == 0.0);
      CHECK(z[static_cast<std::size_t>(6 + 6 * k + a)] == 1.0);
    }

  auto p = Td::from_vector({2, 3}, {0.1, -0.2, 0.3, 0.4, 0.5, -0.6});
  CHECK(posenc(p, 0).to_vector() == p.to_vector());

  const auto q = posenc(Td::from_vector({1, 3}, {0.25, 0.0, 0.0}), 2).to_vector();
  const std::vector<double> expected{0.25, 0, 0,
                                     std::sin(std::numbers::pi * 0.25), 0, 0,
                                     std::cos(std::numbers::pi * 0.25), 1, 1,
                                     std::sin(std::numbers::pi * 0.5), 0, 0,
                                     std::cos(std::numbers::pi * 0.5), 1, 1};
  REQUIRE(q.size() == expected.size());
  for (std::size_t i = 0; i < q.size(); ++i) CHECK(q[i] == doctest::Approx(expected[i]).epsilon(1e-15));
}

TEST_CASE("query_triplane examples") {
  const int c = 2, r = 4;
  std::vector<double> v;
  const double consts[3] = {0.5, -1.25, 2.0};
  for (int k = 0; k < 3; ++k) v.insert(v.end(), static_cast<std::size_t>(c * r * r), consts[k]);
  Triplane<double> tp{Td::from_vector({3 * c, r, r}, v), c, r};
  std::mt19937_64 rng(1);
  auto pts = Td::from_vector({5, 3}, random_values(15, rng, -1.2, 1.2));
  for (double x : query_triplane(tp, pts, 1.0).to_vector()) CHECK(x == doctest::Approx(1.25));

  Triplane<double> zero{Td::zeros({3 * c, r, r}), c, r};
  for (double x : query_triplane(zero, pts, 1.0).to_vector()) CHECK(x == 0.0);

  auto tpr = random_triplane(c, r, rng, 1.0);
  const double h = 1.5;
  const auto raw = random_values(30, rng, -h, h);
  auto q = query_triplane(tpr, Td::from_vector({10, 3}, raw), h);
  const auto planes = tpr.planes.to_vector();
  for (int i = 0; i < 10; ++i) {
    const double x = raw[static_cast<std::size_t>(3 * i)] / h, y = raw[static_cast<std::size_t>(3 * i + 1)] / h,
                 zc = raw[static_cast<std::size_t>(3 * i + 2)] / h;
    for (int ch = 0; ch < c; ++ch) {
      auto grid = [&](int k) {
        return std::vector<double>(planes.begin() + (k * c + ch) * r * r, planes.begin() + (k * c + ch + 1) * r * r);
      };
      const double expected = bilinear_oracle(grid(0), r, x, y) + bilinear_oracle(grid(1), r, x, zc) +
                              bilinear_oracle(grid(2), r, y, zc);
      CHECK(q.data()[static_cast<std::size_t>(i * c + ch)] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("head initial state") {
  HeadConfig cfg;
  ImplicitHeads<double> heads(cfg, 4, 3);
  std::mt19937_64 rng(4);
  auto tp = random_triplane(4, 8, rng, 1.0);
  std::vector<double> pts{0, 0, 0, 0.5, 0, 0, 0, -0.3, 0.4, 0.2, 0.7, 0.1};
  auto points = Td::from_vector({4, 3}, pts);
  auto f = heads.features(tp, points);
  CHECK(f.shape() == Shape{4, heads.input_width()});

  const auto s = heads.sdf(f, points).to_vector();
  CHECK(s[0] == doctest::Approx(-0.5));
  CHECK(s[1] == doctest::Approx(0.0));
  CHECK(s[2] == doctest::Approx(0.0));
  CHECK(s[3] == doctest::Approx(std::sqrt(0.04 + 0.49 + 0.01) - 0.5));
  for (double x : heads.color(f).to_vector()) CHECK(x == 0.5);
  for (double x : heads.deform(f, 0.1).to_vector()) CHECK(x == 0.0);
}

TEST_CASE("head output bounds hold for large weights") {
  HeadConfig cfg;
  ImplicitHeads<double> heads(cfg, 4, 5);
  std::mt19937_64 rng(6);
  randomize(heads.color_mlp(), rng, 3.0);
  randomize(heads.deform_mlp(), rng, 3.0);
  auto tp = random_triplane(4, 8, rng, 5.0);
  auto points = Td::from_vector({200, 3}, random_values(600, rng, -1, 1));
  auto f = heads.features(tp, points);
  const double edge = 2.0 / 48;
  for (double x : heads.deform(f, edge).to_vector()) CHECK(std::abs(x) <= 0.5 * edge);
  for (double x : heads.color(f).to_vector()) {
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
  }
}

TEST_CASE("sdf_normals match finite differences of the sdf") {
  HeadConfig cfg;
  cfg.half_extent = 1.2;
  ImplicitHeads<double> heads(cfg, 4, 7);
  std::mt19937_64 rng(8);
  randomize(heads.sdf_mlp(), rng, 0.5);
  auto tp = random_triplane(4, 6, rng, 1.0);
  const auto raw = random_values(60, rng, -0.9, 0.9);
  auto points = Td::from_vector({20, 3}, raw);
  auto normals = heads.sdf_normals(tp, points, heads.features(tp, points));
  const double h = 1e-6;
  for (int i = 0; i < 20; ++i) {
    std::array<double, 3> g{};
    for (int a = 0; a < 3; ++a) {
      auto plus = raw, minus = raw;
      plus[static_cast<std::size_t>(3 * i + a)] += h;
      minus[static_cast<std::size_t>(3 * i + a)] -= h;
      auto pp = Td::from_vector({20, 3}, plus), pm = Td::from_vector({20, 3}, minus);
      g[a] = (heads.sdf(heads.features(tp, pp), pp).data()[i] - heads.sdf(heads.features(tp, pm), pm).data()[i]) / (2 * h);
    }
    const double len = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    for (int a = 0; a < 3; ++a)
      CHECK(normals.data()[static_cast<std::size_t>(3 * i + a)] == doctest::Approx(g[a] / len).epsilon(1e-6));
  }
}

TEST_CASE("heads pass finite-difference checks including the normal graph") {
  HeadConfig cfg;
  cfg.octaves = 2;
  cfg.hidden = 8;
  ImplicitHeads<double> heads(cfg, 3, 9);
  std::mt19937_64 rng(10);
  randomize(heads.sdf_mlp(), rng, 0.6);
  randomize(heads.color_mlp(), rng, 0.6);
  randomize(heads.deform_mlp(), rng, 0.6);
  auto tp = random_triplane(3, 5, rng, 1.0, true);
  // Sample coordinates kept off texel boundaries (every 0.5 in normalized units).
  std::vector<double> raw;
  for (int i = 0; i < 8; ++i)
    for (int a = 0; a < 3; ++a) raw.push_back(-0.95 + 0.5 * ((i + a) % 4) + std::uniform_real_distribution<>(0.1, 0.4)(rng));
  auto points = Td::from_vector({8, 3}, raw);
  auto wn = Td::from_vector({8, 3}, random_values(24, rng, -1, 1));
  auto wc = Td::from_vector({8, 3}, random_values(24, rng, -1, 1));
  auto ws = Td::from_vector({8}, random_values(8, rng, -1, 1));

  std::vector<NamedTensor> leaves{{"planes", tp.planes}};
  for (auto& p : heads.parameters()) leaves.push_back({p.name, p.tensor});
  auto loss = [&] {
    auto f = heads.features(tp, points);
    auto l = sum(mul(heads.sdf_normals(tp, points, f), wn));
    l = add(l, sum(mul(heads.color(f), wc)));
    l = add(l, sum(mul(heads.sdf(f, points), ws)));
    return add(l, sum(mul(heads.deform(f, 0.2), wc)));
  };
  GradCheckOptions opts;
  opts.samples_per_tensor = 8;
  const auto report = check_gradients(loss, leaves, opts);
  INFO(report.worst);
  CHECK(report.max_rel_error < 1e-4);
}
