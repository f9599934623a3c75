#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "atom/ops.hpp"

namespace atom {

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::int64_t groups,
                 std::int64_t padding) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw TensorError(fmt::format("conv2d: expected NCHW input and OIkk kernel, got {} and {}",
                                  shape_to_string(input.shape()), shape_to_string(kernel.shape())));
  }
  const auto batch = input.dim(0), channels = input.dim(1), height = input.dim(2), width = input.dim(3);
  const auto out_channels = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (groups < 1 || channels % groups != 0 || out_channels % groups != 0 ||
      kernel.dim(1) != channels / groups) {
    throw TensorError(fmt::format("conv2d: kernel {} incompatible with {} input channels in {} groups",
                                  shape_to_string(kernel.shape()), channels, groups));
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw TensorError("conv2d: kernel size must be odd");
  const auto out_h = height + 2 * padding - kh + 1;
  const auto out_w = width + 2 * padding - kw + 1;
  if (out_h <= 0 || out_w <= 0) throw TensorError("conv2d: kernel larger than padded input");
  const auto in_per_group = channels / groups;
  const auto out_per_group = out_channels / groups;

  // Visits every (output pixel, input pixel, weight) triple once.
  auto sweep = [=](auto&& fn) {
    for (std::int64_t n = 0; n < batch; ++n)
      for (std::int64_t o = 0; o < out_channels; ++o) {
        const auto group = o / out_per_group;
        for (std::int64_t ci = 0; ci < in_per_group; ++ci) {
          const auto c = group * in_per_group + ci;
          for (std::int64_t ky = 0; ky < kh; ++ky)
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const auto w_index = ((o * in_per_group + ci) * kh + ky) * kw + kx;
              const auto x_lo = std::max<std::int64_t>(0, padding - kx);
              const auto x_hi = std::min<std::int64_t>(out_w, width + padding - kx);
              for (std::int64_t y = 0; y < out_h; ++y) {
                const auto iy = y + ky - padding;
                if (iy < 0 || iy >= height) continue;
                const auto out_row = ((n * out_channels + o) * out_h + y) * out_w;
                const auto in_row = ((n * channels + c) * height + iy) * width + kx - padding;
                fn(out_row, in_row, w_index, x_lo, x_hi);
              }
            }
        }
      }
  };

  const T* px = input.data().data();
  const T* pk = kernel.data().data();
  std::vector<T> out(static_cast<std::size_t>(batch * out_channels * out_h * out_w), T(0));
  sweep([&](std::int64_t out_row, std::int64_t in_row, std::int64_t w_index, std::int64_t x_lo,
            std::int64_t x_hi) {
    const T w = pk[w_index];
    T* dst = out.data() + out_row;
    const T* src = px + in_row;
    for (std::int64_t x = x_lo; x < x_hi; ++x) dst[x] += w * src[x];
  });

  return make_op<T>("conv2d", {batch, out_channels, out_h, out_w}, std::move(out), {input, kernel},
                    [input, kernel, sweep](const std::vector<T>& g) {
                      T* gx = grad_of(input);
                      T* gk = grad_of(kernel);
                      const T* px = input.data().data();
                      const T* pk = kernel.data().data();
                      sweep([&](std::int64_t out_row, std::int64_t in_row, std::int64_t w_index,
                                std::int64_t x_lo, std::int64_t x_hi) {
                        const T* go = g.data() + out_row;
                        if (gx) {
                          const T w = pk[w_index];
                          T* dst = gx + in_row;
                          for (std::int64_t x = x_lo; x < x_hi; ++x) dst[x] += w * go[x];
                        }
                        if (gk) {
                          const T* src = px + in_row;
                          T acc = T(0);
                          for (std::int64_t x = x_lo; x < x_hi; ++x) acc += go[x] * src[x];
                          gk[w_index] += acc;
                        }
                      });
                    });
}

namespace {

// Texel neighbourhood and blend weights for one coordinate pair.
template <typename T>
struct BilinearTap {
  std::int64_t i0, i1, j0, j1;
  T a, b;        // fractional offsets along H and W
  T du, dv;      // d(a)/d(coord0) and d(b)/d(coord1); zero when clamped
};

template <typename T>
void locate_axis(T coord, std::int64_t size, std::int64_t& lo, std::int64_t& hi, T& frac, T& slope) {
  if (std::isnan(coord)) throw TensorError("interp_bilinear: NaN coordinate");
  if (size == 1) {
    lo = hi = 0;
    frac = T(0);
    slope = T(0);
    return;
  }
  const T scale = T(size - 1) / T(2);
  T f = (coord + T(1)) * scale;
  slope = scale;
  if (coord < T(-1) || coord > T(1)) {
    f = std::clamp(f, T(0), T(size - 1));
    slope = T(0);
  }
  lo = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(f)), size - 2);
  hi = lo + 1;
  frac = f - T(lo);
}

template <typename T>
BilinearTap<T> make_tap(T u, T v, std::int64_t h, std::int64_t w) {
  BilinearTap<T> t{};
  locate_axis(u, h, t.i0, t.i1, t.a, t.du);
  locate_axis(v, w, t.j0, t.j1, t.b, t.dv);
  return t;
}

template <typename T>
void check_plane_coords(const char* op, const Tensor<T>& plane, const Tensor<T>& coords) {
  if (plane.rank() != 3 || coords.rank() != 2 || coords.dim(1) != 2) {
    throw TensorError(fmt::format("{}: expected plane [C, H, W] and coords [N, 2], got {} and {}", op,
                                  shape_to_string(plane.shape()), shape_to_string(coords.shape())));
  }
}

}  // namespace

template <typename T>
Tensor<T> interp_bilinear(const Tensor<T>& plane, const Tensor<T>& coords) {
  check_plane_coords("interp_bilinear", plane, coords);
  const auto channels = plane.dim(0), h = plane.dim(1), w = plane.dim(2);
  const auto n = coords.dim(0);
  const auto hw = h * w;
  const T* pp = plane.data().data();
  const T* pc = coords.data().data();
  std::vector<BilinearTap<T>> taps(static_cast<std::size_t>(n));
  std::vector<T> out(static_cast<std::size_t>(n * channels));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto t = taps[i] = make_tap(pc[2 * i], pc[2 * i + 1], h, w);
    const T w00 = (T(1) - t.a) * (T(1) - t.b), w01 = (T(1) - t.a) * t.b;
    const T w10 = t.a * (T(1) - t.b), w11 = t.a * t.b;
    const auto o00 = t.i0 * w + t.j0, o01 = t.i0 * w + t.j1, o10 = t.i1 * w + t.j0, o11 = t.i1 * w + t.j1;
    T* dst = out.data() + i * channels;
    for (std::int64_t c = 0; c < channels; ++c) {
      const T* p = pp + c * hw;
      dst[c] = w00 * p[o00] + w01 * p[o01] + w10 * p[o10] + w11 * p[o11];
    }
  }
  return make_op<T>("interp_bilinear", {n, channels}, std::move(out), {plane, coords},
                    [plane, coords, taps = std::move(taps), channels, w, hw](const std::vector<T>& g) {
                      T* gp = grad_of(plane);
                      T* gc = grad_of(coords);
                      const T* pp = plane.data().data();
                      for (std::size_t i = 0; i < taps.size(); ++i) {
                        const auto& t = taps[i];
                        const T w00 = (T(1) - t.a) * (T(1) - t.b), w01 = (T(1) - t.a) * t.b;
                        const T w10 = t.a * (T(1) - t.b), w11 = t.a * t.b;
                        const auto o00 = t.i0 * w + t.j0, o01 = t.i0 * w + t.j1;
                        const auto o10 = t.i1 * w + t.j0, o11 = t.i1 * w + t.j1;
                        const T* gi = g.data() + i * channels;
                        T da = T(0), db = T(0);
                        for (std::int64_t c = 0; c < channels; ++c) {
                          if (gp) {
                            T* q = gp + c * hw;
                            q[o00] += w00 * gi[c];
                            q[o01] += w01 * gi[c];
                            q[o10] += w10 * gi[c];
                            q[o11] += w11 * gi[c];
                          }
                          if (gc) {
                            const T* p = pp + c * hw;
                            da += gi[c] * ((T(1) - t.b) * (p[o10] - p[o00]) + t.b * (p[o11] - p[o01]));
                            db += gi[c] * ((T(1) - t.a) * (p[o01] - p[o00]) + t.a * (p[o11] - p[o10]));
                          }
                        }
                        if (gc) {
                          gc[2 * i] += da * t.du;
                          gc[2 * i + 1] += db * t.dv;
                        }
                      }
                    });
}

template <typename T>
Tensor<T> interp_bilinear_coord_vjp(const Tensor<T>& plane, const Tensor<T>& coords, const Tensor<T>& g) {
  check_plane_coords("interp_bilinear_coord_vjp", plane, coords);
  const auto channels = plane.dim(0), h = plane.dim(1), w = plane.dim(2);
  const auto n = coords.dim(0);
  if (g.rank() != 2 || g.dim(0) != n || g.dim(1) != channels) {
    throw TensorError(fmt::format("interp_bilinear_coord_vjp: cotangent shape {} should be [{}, {}]",
                                  shape_to_string(g.shape()), n, channels));
  }
  const auto hw = h * w;
  const T* pp = plane.data().data();
  const T* pc = coords.data().data();
  const T* pg = g.data().data();
  std::vector<BilinearTap<T>> taps(static_cast<std::size_t>(n));
  std::vector<T> out(static_cast<std::size_t>(n * 2));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto t = taps[i] = make_tap(pc[2 * i], pc[2 * i + 1], h, w);
    const auto o00 = t.i0 * w + t.j0, o01 = t.i0 * w + t.j1, o10 = t.i1 * w + t.j0, o11 = t.i1 * w + t.j1;
    T da = T(0), db = T(0);
    for (std::int64_t c = 0; c < channels; ++c) {
      const T* p = pp + c * hw;
      const T gc = pg[i * channels + c];
      da += gc * ((T(1) - t.b) * (p[o10] - p[o00]) + t.b * (p[o11] - p[o01]));
      db += gc * ((T(1) - t.a) * (p[o01] - p[o00]) + t.a * (p[o11] - p[o10]));
    }
    out[2 * i] = da * t.du;
    out[2 * i + 1] = db * t.dv;
  }
  return make_op<T>(
      "interp_bilinear_coord_vjp", {n, 2}, std::move(out), {plane, g},
      [plane, g, taps = std::move(taps), channels, w, hw](const std::vector<T>& go) {
        T* gp = grad_of(plane);
        T* gg = grad_of(g);
        const T* pp = plane.data().data();
        const T* pg = g.data().data();
        for (std::size_t i = 0; i < taps.size(); ++i) {
          const auto& t = taps[i];
          const T su = go[2 * i] * t.du;
          const T sv = go[2 * i + 1] * t.dv;
          const auto o00 = t.i0 * w + t.j0, o01 = t.i0 * w + t.j1;
          const auto o10 = t.i1 * w + t.j0, o11 = t.i1 * w + t.j1;
          // out_u = su-weighted texel differences; linear in both plane and g.
          const T c00 = -su * (T(1) - t.b) - sv * (T(1) - t.a);
          const T c01 = -su * t.b + sv * (T(1) - t.a);
          const T c10 = su * (T(1) - t.b) - sv * t.a;
          const T c11 = su * t.b + sv * t.a;
          for (std::int64_t c = 0; c < channels; ++c) {
            const T gc = pg[i * channels + c];
            if (gp) {
              T* q = gp + c * hw;
              q[o00] += c00 * gc;
              q[o01] += c01 * gc;
              q[o10] += c10 * gc;
              q[o11] += c11 * gc;
            }
            if (gg) {
              const T* p = pp + c * hw;
              gg[i * channels + c] += c00 * p[o00] + c01 * p[o01] + c10 * p[o10] + c11 * p[o11];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& input, const Tensor<T>& bias) {
  if (input.rank() != 4 || bias.rank() != 1 || bias.dim(0) != input.dim(1)) {
    throw TensorError(fmt::format("add_channel_bias: bias {} does not match input {}",
                                  shape_to_string(bias.shape()), shape_to_string(input.shape())));
  }
  const auto batch = input.dim(0), channels = input.dim(1), plane = input.dim(2) * input.dim(3);
  std::vector<T> out(input.data().begin(), input.data().end());
  const T* pb = bias.data().data();
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t c = 0; c < channels; ++c) {
      T* dst = out.data() + (n * channels + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] += pb[c];
    }
  return make_op<T>("add_channel_bias", input.shape(), std::move(out), {input, bias},
                    [input, bias, batch, channels, plane](const std::vector<T>& g) {
                      if (T* gx = grad_of(input))
                        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                      if (T* gb = grad_of(bias))
                        for (std::int64_t n = 0; n < batch; ++n)
                          for (std::int64_t c = 0; c < channels; ++c) {
                            const T* src = g.data() + (n * channels + c) * plane;
                            T acc = 0;
                            for (std::int64_t i = 0; i < plane; ++i) acc += src[i];
                            gb[c] += acc;
                          }
                    });
}

#define ATOM_INSTANTIATE(T)                                                                    \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, std::int64_t, std::int64_t); \
  template Tensor<T> add_channel_bias<T>(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> interp_bilinear<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> interp_bilinear_coord_vjp<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

ATOM_INSTANTIATE(float)
ATOM_INSTANTIATE(double)

#undef ATOM_INSTANTIATE

}  // namespace atom
