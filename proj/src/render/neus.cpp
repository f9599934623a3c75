#include "atom/neus.hpp"

#include <fmt/format.h>

#include <cmath>
#include <random>

#include "atom/ops.hpp"

namespace atom {

namespace {

// log(sigmoid(x)) without overflow.
double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// alpha and, when unclamped, d alpha / d x0 and d alpha / d x1 for x = s f.
struct AlphaEval {
  double alpha = 0.0;
  double d0 = 0.0;
  double d1 = 0.0;
};

AlphaEval eval_alpha(double x0, double x1) {
  // ratio = Phi(x1) / Phi(x0); alpha = 1 - ratio.
  const double log_ratio = log_sigmoid(x1) - log_sigmoid(x0);
  AlphaEval e;
  if (!(log_ratio < 0.0)) return e;
  const double ratio = std::exp(log_ratio);
  e.alpha = -std::expm1(log_ratio);
  e.d0 = ratio * (1.0 - sigmoid(x0));
  e.d1 = -ratio * (1.0 - sigmoid(x1));
  return e;
}

}  // namespace

double alpha_from_sdf(double f0, double f1, double s) {
  if (!std::isfinite(f0) || !std::isfinite(f1) || !std::isfinite(s))
    throw std::invalid_argument("alpha_from_sdf: non-finite input");
  if (!(s > 0)) throw std::invalid_argument("alpha_from_sdf: sharpness must be positive");
  return eval_alpha(s * f0, s * f1).alpha;
}

double initial_log_sharpness() { return std::log(10.0) / 10.0; }

template <typename T>
Tensor<T> sharpness_from_log(const Tensor<T>& v) {
  return exp(mul_scalar(v, T(10)));
}

template <typename T>
Tensor<T> shade_lambert(const Tensor<T>& albedo, const Tensor<T>& normals, const Shading& shading) {
  const auto n = normals.dim(0);
  const auto light = Tensor<T>::from_vector(
      {3, 1}, {static_cast<T>(shading.light[0]), static_cast<T>(shading.light[1]), static_cast<T>(shading.light[2])});
  auto lambert = relu(reshape(matmul(normals, light), {n}));
  auto factor = add_scalar(mul_scalar(lambert, static_cast<T>(1.0 - shading.ambient)), static_cast<T>(shading.ambient));
  if (shading.mode == ShadingMode::textureless) {
    const auto column = reshape(factor, {n, 1});
    const std::array<Tensor<T>, 3> cols{column, column, column};
    return concat_last(std::span<const Tensor<T>>(cols));
  }
  return scale_rows(albedo, factor);
}

template <typename T>
Tensor<T> neus_alpha(const Tensor<T>& sdf, const Tensor<T>& s) {
  if (sdf.rank() != 2 || sdf.dim(1) < 2)
    throw TensorError(fmt::format("neus_alpha: expected sdf [R, n>=2], got {}", shape_to_string(sdf.shape())));
  if (s.numel() != 1) throw TensorError("neus_alpha: sharpness must be a scalar");
  const auto rays = sdf.dim(0), n = sdf.dim(1), m = n - 1;
  const double sv = static_cast<double>(s.data()[0]);
  if (!(sv > 0) || !std::isfinite(sv)) throw TensorError("neus_alpha: sharpness must be positive and finite");
  const T* f = sdf.data().data();
  std::vector<T> out(static_cast<std::size_t>(rays * m));
  for (std::int64_t r = 0; r < rays; ++r)
    for (std::int64_t i = 0; i < m; ++i) {
      const double f0 = f[r * n + i], f1 = f[r * n + i + 1];
      if (!std::isfinite(f0) || !std::isfinite(f1)) throw TensorError("neus_alpha: non-finite sdf value");
      out[static_cast<std::size_t>(r * m + i)] = static_cast<T>(eval_alpha(sv * f0, sv * f1).alpha);
    }
  return make_op<T>("neus_alpha", {rays, m}, std::move(out), {sdf, s}, [sdf, s, rays, n, m](const std::vector<T>& g) {
    T* gf = grad_of(sdf);
    T* gs = grad_of(s);
    const T* f = sdf.data().data();
    const double sv = static_cast<double>(s.data()[0]);
    double acc_s = 0.0;
    for (std::int64_t r = 0; r < rays; ++r)
      for (std::int64_t i = 0; i < m; ++i) {
        const double go = g[static_cast<std::size_t>(r * m + i)];
        if (go == 0.0) continue;
        const double f0 = f[r * n + i], f1 = f[r * n + i + 1];
        const auto e = eval_alpha(sv * f0, sv * f1);
        if (gf) {
          gf[r * n + i] += static_cast<T>(go * e.d0 * sv);
          gf[r * n + i + 1] += static_cast<T>(go * e.d1 * sv);
        }
        acc_s += go * (e.d0 * f0 + e.d1 * f1);
      }
    if (gs) gs[0] += static_cast<T>(acc_s);
  });
}

template <typename T>
Tensor<T> composite(const Tensor<T>& alphas, const Tensor<T>& colors, const Vec3& background, CompositeAudit* audit) {
  if (alphas.rank() != 2 || colors.rank() != 3 || colors.dim(0) != alphas.dim(0) || colors.dim(1) != alphas.dim(1) ||
      colors.dim(2) != 3)
    throw TensorError(fmt::format("composite: alphas {} and colors {} do not match", shape_to_string(alphas.shape()),
                                  shape_to_string(colors.shape())));
  const auto rays = alphas.dim(0), m = alphas.dim(1);
  const T* a = alphas.data().data();
  const T* c = colors.data().data();
  std::vector<T> out(static_cast<std::size_t>(rays * 4));
  for (std::int64_t r = 0; r < rays; ++r) {
    double trans = 1.0, rgb[3] = {0, 0, 0}, opacity = 0.0;
    bool bad = false;
    for (std::int64_t i = 0; i < m; ++i) {
      const double al = a[r * m + i];
      if (al < 0.0 || al > 1.0) bad = true;
      const double w = trans * al;
      for (int k = 0; k < 3; ++k) rgb[k] += w * c[(r * m + i) * 3 + k];
      opacity += w;
      const double next = trans * (1.0 - al);
      if (next > trans) bad = true;
      trans = next;
    }
    if (opacity > 1.0 + 1e-6) bad = true;
    for (int k = 0; k < 3; ++k) out[static_cast<std::size_t>(r * 4 + k)] = static_cast<T>(rgb[k] + trans * background[k]);
    out[static_cast<std::size_t>(r * 4 + 3)] = static_cast<T>(opacity);
    if (audit) {
      ++audit->rays;
      if (bad) ++audit->violations;
      audit->max_weight_sum = std::max(audit->max_weight_sum, opacity);
    }
  }
  return make_op<T>("composite", {rays, 4}, std::move(out), {alphas, colors},
                    [alphas, colors, rays, m, background](const std::vector<T>& g) {
                      T* ga = grad_of(alphas);
                      T* gc = grad_of(colors);
                      const T* a = alphas.data().data();
                      const T* c = colors.data().data();
                      std::vector<double> trans(static_cast<std::size_t>(m));
                      for (std::int64_t r = 0; r < rays; ++r) {
                        const T* go = g.data() + r * 4;
                        double t = 1.0;
                        for (std::int64_t i = 0; i < m; ++i) {
                          trans[static_cast<std::size_t>(i)] = t;
                          t *= 1.0 - a[r * m + i];
                        }
                        // rest = what lies behind sample i, as seen through it:
                        // rest_{m-1} = (background, 0); rest_{i-1} = a_i e_i + (1 - a_i) rest_i.
                        double rest[4] = {background[0], background[1], background[2], 0.0};
                        for (std::int64_t i = m - 1; i >= 0; --i) {
                          const double al = a[r * m + i];
                          const double ti = trans[static_cast<std::size_t>(i)];
                          const double e[4] = {double(c[(r * m + i) * 3]), double(c[(r * m + i) * 3 + 1]),
                                               double(c[(r * m + i) * 3 + 2]), 1.0};
                          if (ga) {
                            double acc = 0.0;
                            for (int k = 0; k < 4; ++k) acc += go[k] * (e[k] - rest[k]);
                            ga[r * m + i] += static_cast<T>(ti * acc);
                          }
                          if (gc)
                            for (int k = 0; k < 3; ++k) gc[(r * m + i) * 3 + k] += static_cast<T>(go[k] * ti * al);
                          for (int k = 0; k < 4; ++k) rest[k] = al * e[k] + (1.0 - al) * rest[k];
                        }
                      }
                    });
}

template <typename T>
RenderOutput<T> render_stage1(const Triplane<T>& tp, const ImplicitHeads<T>& heads, const Tensor<T>& sharpness,
                              const Camera& cam, const Stage1Options& options) {
  if (options.samples < 2) throw std::invalid_argument("render_stage1 needs at least 2 samples per ray");
  const auto rays = make_rays(cam);
  const std::int64_t pixels = static_cast<std::int64_t>(cam.width) * cam.height;
  const int n = options.samples;
  const double h = heads.config().half_extent;
  const auto& bg = options.shading.background;

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  std::vector<std::int64_t> hit;
  std::vector<T> pts;
  for (std::int64_t p = 0; p < pixels; ++p) {
    double t0, t1;
    const auto& o = rays.origins[static_cast<std::size_t>(p)];
    const auto& d = rays.directions[static_cast<std::size_t>(p)];
    if (!ray_box(o, d, h, t0, t1)) continue;
    hit.push_back(p);
    for (int i = 0; i < n; ++i) {
      const double u = options.stratified ? (i + jitter(rng)) / n : static_cast<double>(i) / (n - 1);
      const double t = t0 + (t1 - t0) * u;
      for (int a = 0; a < 3; ++a) pts.push_back(static_cast<T>(o[a] + t * d[a]));
    }
  }

  // Constant background on missed pixels.
  std::vector<T> miss_rgb(static_cast<std::size_t>(pixels * 3));
  for (std::int64_t p = 0; p < pixels; ++p)
    for (int k = 0; k < 3; ++k) miss_rgb[static_cast<std::size_t>(p * 3 + k)] = static_cast<T>(bg[k]);
  for (auto p : hit)
    for (int k = 0; k < 3; ++k) miss_rgb[static_cast<std::size_t>(p * 3 + k)] = T(0);

  RenderOutput<T> out;
  out.width = cam.width;
  out.height = cam.height;
  if (hit.empty()) {
    out.rgb = Tensor<T>::from_vector({pixels, 3}, std::move(miss_rgb));
    out.opacity = Tensor<T>::zeros({pixels});
    return out;
  }

  const auto m = static_cast<std::int64_t>(hit.size());
  const auto points = Tensor<T>::from_vector({m * n, 3}, std::move(pts));
  const auto feats = heads.features(tp, points);
  const auto sdf = reshape(heads.sdf(feats, points), {m, n});
  const auto alphas = neus_alpha(sdf, sharpness);

  // Shade the first n - 1 samples; each interval takes its front sample's color.
  std::vector<std::int64_t> front;
  front.reserve(static_cast<std::size_t>(m * (n - 1)));
  for (std::int64_t r = 0; r < m; ++r)
    for (int i = 0; i < n - 1; ++i) front.push_back(r * n + i);
  const auto front_points = gather_rows(points, front);
  const auto front_feats = gather_rows(feats, front);
  const auto normals = heads.sdf_normals(tp, front_points, front_feats);
  const auto albedo = options.shading.mode == ShadingMode::textureless ? Tensor<T>() : heads.color(front_feats);
  const auto colors = reshape(shade_lambert(albedo, normals, options.shading), {m, n - 1, 3});

  const auto pix = composite(alphas, colors, bg, options.audit);  // [m, 4]
  out.rgb = add(scatter_rows(slice_last(pix, 0, 3), hit, pixels), Tensor<T>::from_vector({pixels, 3}, std::move(miss_rgb)));
  out.opacity = reshape(scatter_rows(slice_last(pix, 3, 1), hit, pixels), {pixels});
  return out;
}

#define ATOM_INSTANTIATE(T)                                                                                      \
  template Tensor<T> sharpness_from_log<T>(const Tensor<T>&);                                                    \
  template Tensor<T> shade_lambert<T>(const Tensor<T>&, const Tensor<T>&, const Shading&);                       \
  template Tensor<T> neus_alpha<T>(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> composite<T>(const Tensor<T>&, const Tensor<T>&, const Vec3&, CompositeAudit*);            \
  template RenderOutput<T> render_stage1<T>(const Triplane<T>&, const ImplicitHeads<T>&, const Tensor<T>&,       \
                                            const Camera&, const Stage1Options&);

ATOM_INSTANTIATE(float)
ATOM_INSTANTIATE(double)

#undef ATOM_INSTANTIATE

}  // namespace atom
