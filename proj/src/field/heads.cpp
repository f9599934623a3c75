#include <fmt/format.h>

#include <array>
#include <cmath>
#include <numbers>

#include "atom/field.hpp"
#include "atom/ops.hpp"

namespace atom {

namespace {

// Plane k samples these two point coordinates (XY, XZ, YZ).
constexpr std::array<std::array<int, 2>, 3> kPlaneAxes{{{0, 1}, {0, 2}, {1, 2}}};

template <typename T>
Tensor<T> plane_slice(const Triplane<T>& tp, int k) {
  const std::int64_t c = tp.channels, r = tp.resolution;
  return reshape(select_first(reshape(tp.planes, {3, c * r * r}), k), {c, r, r});
}

// Normalized [N, 2] sample coordinates for plane k.
template <typename T>
Tensor<T> plane_coords(const Tensor<T>& points, int k, double half_extent) {
  const auto n = points.dim(0);
  const T* p = points.data().data();
  std::vector<T> uv(static_cast<std::size_t>(2 * n));
  const T inv = static_cast<T>(1.0 / half_extent);
  for (std::int64_t i = 0; i < n; ++i) {
    uv[2 * i] = p[3 * i + kPlaneAxes[k][0]] * inv;
    uv[2 * i + 1] = p[3 * i + kPlaneAxes[k][1]] * inv;
  }
  return Tensor<T>::from_vector({n, 2}, std::move(uv));
}

// [2, 3] matrix sending plane-coordinate gradients to xyz.
template <typename T>
Tensor<T> plane_to_xyz(int k, double scale) {
  std::vector<T> m(6, T(0));
  m[kPlaneAxes[k][0]] = static_cast<T>(scale);
  m[3 + kPlaneAxes[k][1]] = static_cast<T>(scale);
  return Tensor<T>::from_vector({2, 3}, std::move(m));
}

template <typename T>
void check_points(const Tensor<T>& points) {
  if (points.rank() != 2 || points.dim(1) != 3)
    throw TensorError(fmt::format("expected points [N, 3], got {}", shape_to_string(points.shape())));
}

template <typename T>
Mlp<T> make_mlp(int in, int hidden, int out, std::mt19937_64& rng) {
  Mlp<T> m;
  m.w1 = uniform_param<T>({in, hidden}, 1.0 / std::sqrt(double(in)), rng);
  m.b1 = zero_param<T>({hidden});
  m.w2 = uniform_param<T>({hidden, hidden}, 1.0 / std::sqrt(double(hidden)), rng);
  m.b2 = zero_param<T>({hidden});
  m.w3 = zero_param<T>({hidden, out});
  m.b3 = zero_param<T>({out});
  return m;
}

template <typename T>
void append_mlp(ParamList<T>& out, const std::string& prefix, const Mlp<T>& m) {
  out.push_back({prefix + ".w1", m.w1});
  out.push_back({prefix + ".b1", m.b1});
  out.push_back({prefix + ".w2", m.w2});
  out.push_back({prefix + ".b2", m.b2});
  out.push_back({prefix + ".w3", m.w3});
  out.push_back({prefix + ".b3", m.b3});
}

}  // namespace

template <typename T>
Tensor<T> posenc(const Tensor<T>& points, int octaves) {
  check_points(points);
  if (octaves < 0) throw TensorError("negative octave count");
  std::vector<Tensor<T>> parts{points};
  for (int k = 0; k < octaves; ++k) {
    auto scaled = mul_scalar(points, static_cast<T>(std::ldexp(std::numbers::pi, k)));
    parts.push_back(sin(scaled));
    parts.push_back(cos(scaled));
  }
  if (parts.size() == 1) return points;
  return concat_last(std::span<const Tensor<T>>(parts));
}

template <typename T>
Tensor<T> query_triplane(const Triplane<T>& tp, const Tensor<T>& points, double half_extent) {
  check_points(points);
  Tensor<T> total;
  for (int k = 0; k < 3; ++k) {
    auto sample = interp_bilinear(plane_slice(tp, k), plane_coords(points, k, half_extent));
    total = total.defined() ? add(total, sample) : sample;
  }
  return total;
}

template <typename T>
Tensor<T> mlp_forward(const Mlp<T>& m, const Tensor<T>& x) {
  auto h = softplus(add(matmul(x, m.w1), m.b1));
  h = softplus(add(matmul(h, m.w2), m.b2));
  return add(matmul(h, m.w3), m.b3);
}

template <typename T>
ImplicitHeads<T>::ImplicitHeads(const HeadConfig& config, int triplane_channels, std::uint64_t seed)
    : config_(config), channels_(triplane_channels) {
  if (config.hidden < 1 || config.octaves < 0 || !(config.half_extent > 0) || triplane_channels < 1)
    throw TensorError("invalid head configuration");
  std::mt19937_64 rng(seed);
  const int in = input_width();
  sdf_ = make_mlp<T>(in, config.hidden, 1, rng);
  color_ = make_mlp<T>(in, config.hidden, 3, rng);
  deform_ = make_mlp<T>(in, config.hidden, 3, rng);
}

template <typename T>
Tensor<T> ImplicitHeads<T>::features(const Triplane<T>& tp, const Tensor<T>& points) const {
  if (tp.channels != channels_)
    throw TensorError(fmt::format("triplane has {} channels, heads expect {}", tp.channels, channels_));
  std::array<Tensor<T>, 2> parts{query_triplane(tp, points, config_.half_extent), posenc(points, config_.octaves)};
  return concat_last(std::span<const Tensor<T>>(parts));
}

template <typename T>
Tensor<T> ImplicitHeads<T>::sdf(const Tensor<T>& features, const Tensor<T>& points) const {
  check_points(points);
  const auto n = points.dim(0);
  std::vector<T> bias(static_cast<std::size_t>(n));
  const T* p = points.data().data();
  for (std::int64_t i = 0; i < n; ++i)
    bias[i] = std::sqrt(p[3 * i] * p[3 * i] + p[3 * i + 1] * p[3 * i + 1] + p[3 * i + 2] * p[3 * i + 2]) -
              static_cast<T>(config_.sphere_radius);
  return add(reshape(mlp_forward(sdf_, features), {n}), Tensor<T>::from_vector({n}, std::move(bias)));
}

template <typename T>
Tensor<T> ImplicitHeads<T>::color(const Tensor<T>& features) const {
  return sigmoid(mlp_forward(color_, features));
}

template <typename T>
Tensor<T> ImplicitHeads<T>::deform(const Tensor<T>& features, double cell_edge) const {
  return mul_scalar(tanh(mlp_forward(deform_, features)), static_cast<T>(0.5 * cell_edge));
}

template <typename T>
Tensor<T> ImplicitHeads<T>::sdf_normals(const Triplane<T>& tp, const Tensor<T>& points,
                                        const Tensor<T>& features) const {
  check_points(points);
  const auto n = points.dim(0);
  const auto& m = sdf_;
  // Reverse-mode chain of the SDF MLP written out as graph ops:
  // dF/dx = ((sigma(z2) * w3^T) w2^T * sigma(z1)) w1^T, with softplus' = sigmoid.
  auto z1 = add(matmul(features, m.w1), m.b1);
  auto z2 = add(matmul(softplus(z1), m.w2), m.b2);
  auto g = mul(sigmoid(z2), reshape(m.w3, {config_.hidden}));
  g = mul(matmul(g, transpose(m.w2)), sigmoid(z1));
  auto gx = matmul(g, transpose(m.w1));  // [N, C + P]

  // Triplane part: per plane, pull back through the bilinear sample.
  const auto g_tri = slice_last(gx, 0, channels_);
  Tensor<T> grad;
  for (int k = 0; k < 3; ++k) {
    auto g_uv = interp_bilinear_coord_vjp(plane_slice(tp, k), plane_coords(points, k, config_.half_extent), g_tri);
    auto g_xyz = matmul(g_uv, plane_to_xyz<T>(k, 1.0 / config_.half_extent));
    grad = grad.defined() ? add(grad, g_xyz) : g_xyz;
  }

  // Positional-encoding part: elementwise derivative, then sum per coordinate.
  const int pw = 3 + 6 * config_.octaves;
  const auto g_pe = slice_last(gx, channels_, pw);
  std::vector<T> dpe(static_cast<std::size_t>(n * pw));
  std::vector<T> select(static_cast<std::size_t>(pw * 3), T(0));
  const T* p = points.data().data();
  for (int f = 0; f < pw; ++f) select[static_cast<std::size_t>(f * 3 + f % 3)] = T(1);
  std::vector<T> sphere(static_cast<std::size_t>(n * 3));
  for (std::int64_t i = 0; i < n; ++i) {
    T* row = dpe.data() + i * pw;
    for (int a = 0; a < 3; ++a) row[a] = T(1);
    for (int k = 0; k < config_.octaves; ++k) {
      const T freq = static_cast<T>(std::ldexp(std::numbers::pi, k));
      for (int a = 0; a < 3; ++a) {
        const T arg = freq * p[3 * i + a];
        row[3 + 6 * k + a] = freq * std::cos(arg);
        row[6 + 6 * k + a] = -freq * std::sin(arg);
      }
    }
    const T len = std::sqrt(p[3 * i] * p[3 * i] + p[3 * i + 1] * p[3 * i + 1] + p[3 * i + 2] * p[3 * i + 2] + T(1e-12));
    for (int a = 0; a < 3; ++a) sphere[static_cast<std::size_t>(3 * i + a)] = p[3 * i + a] / len;
  }
  auto g_p = matmul(mul(g_pe, Tensor<T>::from_vector({n, pw}, std::move(dpe))),
                    Tensor<T>::from_vector({pw, 3}, std::move(select)));
  grad = add(add(grad, g_p), Tensor<T>::from_vector({n, 3}, std::move(sphere)));

  auto norm = sqrt(add_scalar(sum_last(square(grad)), static_cast<T>(1e-12)));
  return scale_rows(grad, div(Tensor<T>::full({n}, T(1)), norm));
}

template <typename T>
ParamList<T> ImplicitHeads<T>::sdf_parameters() const {
  ParamList<T> out;
  append_mlp(out, "heads.sdf", sdf_);
  return out;
}

template <typename T>
ParamList<T> ImplicitHeads<T>::color_parameters() const {
  ParamList<T> out;
  append_mlp(out, "heads.color", color_);
  return out;
}

template <typename T>
ParamList<T> ImplicitHeads<T>::deform_parameters() const {
  ParamList<T> out;
  append_mlp(out, "heads.deform", deform_);
  return out;
}

template <typename T>
ParamList<T> ImplicitHeads<T>::parameters() const {
  auto out = sdf_parameters();
  for (auto& p : color_parameters()) out.push_back(p);
  for (auto& p : deform_parameters()) out.push_back(p);
  return out;
}

#define ATOM_INSTANTIATE(T)                                                            \
  template Tensor<T> posenc<T>(const Tensor<T>&, int);                                 \
  template Tensor<T> query_triplane<T>(const Triplane<T>&, const Tensor<T>&, double);  \
  template Tensor<T> mlp_forward<T>(const Mlp<T>&, const Tensor<T>&);                  \
  template class ImplicitHeads<T>;

ATOM_INSTANTIATE(float)
ATOM_INSTANTIATE(double)

#undef ATOM_INSTANTIATE

}  // namespace atom
