#include "atom/selfcheck.hpp"

#include <array>
#include <random>

#include "atom/gradcheck.hpp"
#include "atom/model.hpp"
#include "atom/ops.hpp"
#include "atom/raster.hpp"

namespace atom {

namespace {

using Td = Tensor<double>;

struct Suite {
  std::mt19937_64 rng;
  std::vector<SelfCheckResult> results;
  const SelfCheckOptions& options;

  Td param(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = u(rng);
    return Td::parameter(std::move(shape), std::move(v));
  }
  Td constant_like(const Td& x) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(x.numel()));
    for (auto& e : v) e = u(rng);
    return Td::from_vector(x.shape(), std::move(v));
  }

  void run(const std::string& name, const std::function<Td()>& f, std::vector<NamedTensor> leaves,
           GradCheckOptions opts = {}) {
    opts.step = opts.step == GradCheckOptions{}.step ? 1e-6 : opts.step;
    // Fixed random weights on the output so every element matters.
    const auto probe = f();
    const auto w = probe.numel() == 1 ? Td::scalar(1.0) : constant_like(probe);
    const auto report = check_gradients([&] { return probe.numel() == 1 ? f() : sum(mul(f(), w)); }, leaves, opts);
    results.push_back({name, report.max_rel_error, report.worst, report.entries.size()});
    if (options.progress) options.progress(results.back());
  }
};

void op_checks(Suite& s) {
  auto a = s.param({3, 4}, 0.2, 1.5);
  auto b = s.param({3, 4}, 0.3, 1.2);
  auto row = s.param({4});
  auto sc = s.param({});
  const std::vector<NamedTensor> ab{{"a", a}, {"b", b}};
  s.run("add", [&] { return add(a, row); }, {{"a", a}, {"row", row}});
  s.run("sub", [&] { return sub(a, sc); }, {{"a", a}, {"s", sc}});
  s.run("mul", [&] { return mul(a, b); }, ab);
  s.run("div", [&] { return div(a, b); }, ab);
  s.run("add_scalar", [&] { return add_scalar(a, 0.3); }, ab);
  s.run("mul_scalar", [&] { return mul_scalar(a, -1.7); }, ab);
  s.run("neg", [&] { return neg(a); }, ab);
  s.run("exp", [&] { return exp(a); }, ab);
  s.run("log", [&] { return log(a); }, ab);
  s.run("sqrt", [&] { return sqrt(a); }, ab);
  s.run("square", [&] { return square(a); }, ab);
  s.run("sin", [&] { return sin(a); }, ab);
  s.run("cos", [&] { return cos(a); }, ab);
  s.run("tanh", [&] { return tanh(a); }, ab);
  s.run("sigmoid", [&] { return sigmoid(a); }, ab);
  s.run("softplus", [&] { return softplus(a); }, ab);
  s.run("relu", [&] { return relu(add_scalar(a, -0.05)); }, ab);  // a > 0.2 keeps clear of the kink
  s.run("gelu", [&] { return gelu(a); }, ab);

  auto m = s.param({4, 3});
  auto n = s.param({3, 5});
  auto t = s.param({2, 3, 4});
  auto c = s.param({4, 2});
  const std::vector<std::int64_t> rows{2, 0, 2, 3};
  s.run("reshape", [&] { return reshape(t, {6, 4}); }, {{"t", t}});
  s.run("transpose", [&] { return transpose(m); }, {{"m", m}});
  s.run("permute", [&] {
    const std::array<std::size_t, 3> order{2, 0, 1};
    return permute(t, std::span<const std::size_t>(order));
  }, {{"t", t}});
  s.run("concat_last", [&] {
    std::array<Td, 2> parts{m, c};
    return concat_last(std::span<const Td>(parts));
  }, {{"m", m}, {"c", c}});
  s.run("slice_last", [&] { return slice_last(n, 1, 3); }, {{"n", n}});
  s.run("select_first", [&] { return select_first(t, 1); }, {{"t", t}});
  s.run("gather_rows", [&] { return gather_rows(m, rows); }, {{"m", m}});
  s.run("scatter_rows", [&] { return scatter_rows(m, rows, 6); }, {{"m", m}});
  s.run("sum", [&] { return sum(square(m)); }, {{"m", m}});
  s.run("mean", [&] { return mean(square(m)); }, {{"m", m}});
  s.run("sum_last", [&] { return sum_last(t); }, {{"t", t}});
  s.run("softmax_last", [&] { return softmax_last(n); }, {{"n", n}});
  auto p3 = s.param({5, 3});
  auto q3 = s.param({5, 3});
  auto r5 = s.param({5});
  s.run("scale_rows", [&] { return scale_rows(p3, r5); }, {{"p", p3}, {"r", r5}});
  s.run("cross3", [&] { return cross3(p3, q3); }, {{"p", p3}, {"q", q3}});
  s.run("matmul", [&] { return matmul(m, n); }, {{"m", m}, {"n", n}});

  auto x = s.param({2, 4, 5, 6});
  auto grouped = s.param({6, 2, 3, 3});
  auto depthwise = s.param({4, 1, 5, 5});
  auto bias = s.param({6});
  s.run("conv2d", [&] { return add(sum(mul(conv2d(x, grouped, 2, 1), conv2d(x, grouped, 2, 1))), sum(conv2d(x, depthwise, 4, 2))); },
        {{"x", x}, {"grouped", grouped}, {"depthwise", depthwise}});
  auto y = s.param({2, 6, 3, 3});
  s.run("add_channel_bias", [&] { return add_channel_bias(y, bias); }, {{"y", y}, {"bias", bias}});

  auto plane = s.param({3, 5, 4});
  std::vector<double> uv;
  std::uniform_real_distribution<double> u(0.2, 0.8);
  for (int k = 0; k < 6; ++k) {
    uv.push_back(-1.0 + 0.5 * (k % 4 + u(s.rng)));
    uv.push_back(-1.0 + (2.0 / 3.0) * (k % 3 + u(s.rng)));
  }
  auto coords = Td::parameter({6, 2}, uv);
  auto cot = s.param({6, 3});
  s.run("interp_bilinear", [&] { return interp_bilinear(plane, coords); }, {{"plane", plane}, {"coords", coords}});
  const auto fixed = Td::from_vector({6, 2}, uv);
  s.run("interp_bilinear_coord_vjp", [&] { return interp_bilinear_coord_vjp(plane, fixed, cot); },
        {{"plane", plane}, {"cot", cot}});
  // The injected scalar's value does not depend on x; its contract is that
  // backward delivers exactly g, i.e. the gradient of <x, stop_grad(g)>.
  const std::vector<double> g{0.3, -0.2, 0.5, 0.1, 0.0, -0.7, 0.25, 0.4, -0.1, 0.9, -0.3, 0.2};
  a.zero_grad();
  backward(inject_gradient(a, std::span<const double>(g)));
  const std::vector<double> injected(a.grad().begin(), a.grad().end());
  const auto gc = Td::from_vector({3, 4}, g);
  std::vector<NamedTensor> la{{"a", a}};
  const auto report = check_gradients([&] { return sum(mul(a, gc)); }, la, GradCheckOptions{1e-6});
  SelfCheckResult r{"inject_gradient", 0.0, "", report.entries.size()};
  for (const auto& e : report.entries) {
    const double err = relative_error(injected[static_cast<std::size_t>(e.index)], e.numeric, 1e-6);
    if (err >= r.max_rel_error) {
      r.max_rel_error = err;
      r.worst = e.tensor + "[" + std::to_string(e.index) + "]";
    }
  }
  s.results.push_back(r);
  if (s.options.progress) s.options.progress(r);
}

void stage1_check(Suite& s) {
  ModelConfig cfg;
  cfg.embedding.dim = 16;
  cfg.embedding.max_tokens = 8;
  cfg.triplane.channels = 4;
  cfg.triplane.resolution = 8;
  cfg.triplane.blocks = 1;
  cfg.triplane.heads = 2;
  cfg.heads.hidden = 16;
  cfg.heads.octaves = 2;
  Model<double> model(cfg, s.options.seed);
  // Zero-initialized residual outputs would hide most of the graph; perturb every weight.
  std::normal_distribution<double> nd(0.0, 0.15);
  for (auto& p : model.stage1_parameters())
    if (p.name != "neus.log_sharpness")
      for (auto& v : Td(p.tensor).mutable_data()) v += nd(s.rng);
  const auto emb = embed("a red sphere wearing a hat", cfg.embedding);
  const auto cam = orbit_camera(30, 20, 3.0, 40, 8, 8);
  Stage1Options o;
  o.samples = 8;
  o.shading = Shading{ShadingMode::diffuse, normalize(Vec3{1, 0.5, 1}), {0.5, 0.5, 0.5}, 0.2};
  std::vector<NamedTensor> leaves;
  for (auto& p : model.stage1_parameters()) leaves.push_back({p.name, p.tensor});
  GradCheckOptions opts;
  opts.samples_per_tensor = 6;
  opts.step = 1e-5;
  s.run("stage1 pipeline",
        [&] { return render_stage1(model.generator.generate(emb), model.heads, model.sharpness(), cam, o).rgb; }, leaves,
        opts);
}

void stage2_check(Suite& s) {
  // One tet with one negative vertex gives exactly one triangle.
  auto grid = build_grid(1, 0.6);
  const auto tet = grid.tets[0];
  grid.tets = {tet};
  std::vector<double> sdf(8, 0.5), offsets(24), colors(24);
  sdf[static_cast<std::size_t>(tet[0])] = -0.6;
  sdf[static_cast<std::size_t>(tet[1])] = 0.4;
  sdf[static_cast<std::size_t>(tet[2])] = 0.7;
  std::uniform_real_distribution<double> small(-0.03, 0.03), unit(0.1, 0.9);
  for (auto& v : offsets) v = small(s.rng);
  for (auto& v : colors) v = unit(s.rng);
  GridField<double> field;
  field.sdf = Td::parameter({8}, sdf);
  field.offsets = Td::parameter({8, 3}, offsets);
  field.colors = Td::parameter({8, 3}, colors);
  const auto cam = orbit_camera(200, 15, 3.0, 30, 12, 12);
  const Shading sh{ShadingMode::diffuse, normalize(Vec3{-1, 0.3, 0.6}), {0.5, 0.5, 0.5}, 0.2};
  const auto mesh = march_tets(grid, field);
  // Coverage is piecewise constant; hold the fragments fixed. Take whichever
  // side of the triangle survives culling.
  auto view = cam;
  auto frags = rasterize(mesh, view);
  if (frags.covered() < 4) {
    view = orbit_camera(20, -15, 3.0, 30, 12, 12);
    frags = rasterize(mesh, view);
  }
  std::vector<NamedTensor> leaves{{"sdf", field.sdf}, {"offsets", field.offsets}, {"colors", field.colors}};
  s.run("stage2 pipeline (1 triangle)", [&] { return shade_fragments(frags, march_tets(grid, field), view, sh).rgb; }, leaves);
  if (mesh.faces.size() != 1 || frags.covered() < 4) {
    s.results.back().max_rel_error = 1.0;
    s.results.back().worst = "expected one visible triangle";
  }
  s.run("stage2 silhouette antialiasing",
        [&] {
          const auto m = march_tets(grid, field);
          return antialias(shade_fragments(frags, m, view, sh).rgb, frags, m, view);
        },
        leaves);
}

}  // namespace

std::vector<SelfCheckResult> run_selfcheck(const SelfCheckOptions& options) {
  Suite s{std::mt19937_64(options.seed), {}, options};
  if (options.ops) op_checks(s);
  if (options.stage1) stage1_check(s);
  if (options.stage2) stage2_check(s);
  return std::move(s.results);
}

}  // namespace atom
