#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "atom/ops.hpp"

namespace atom {

namespace {

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Resolves the output shape of a binary op under the limited broadcast rules.
Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  const auto na = shape_numel(a);
  const auto nb = shape_numel(b);
  if (nb == 1 || (na >= nb && is_suffix(b, a))) return a;
  if (na == 1 || is_suffix(a, b)) return b;
  throw TensorError(fmt::format("{}: cannot broadcast {} with {}", op, shape_to_string(a),
                                shape_to_string(b)));
}

// Calls fn(out_index, a_index, b_index) over the broadcast iteration space.
template <typename Fn>
void for_each_pair(std::int64_t n, std::int64_t na, std::int64_t nb, Fn&& fn) {
  if (na == n && nb == n) {
    for (std::int64_t i = 0; i < n; ++i) fn(i, i, i);
  } else if (na == n) {
    for (std::int64_t o = 0; o < n; o += nb)
      for (std::int64_t k = 0; k < nb; ++k) fn(o + k, o + k, k);
  } else {
    for (std::int64_t o = 0; o < n; o += na)
      for (std::int64_t k = 0; k < na; ++k) fn(o + k, k, o + k);
  }
}

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const char* name, const Tensor<T>& a, const Tensor<T>& b, F f, DA dfa, DB dfb) {
  Shape shape = broadcast_shape(name, a.shape(), b.shape());
  const auto n = shape_numel(shape);
  const auto na = a.numel();
  const auto nb = b.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for_each_pair(n, na, nb, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
    out[i] = f(pa[ia], pb[ib]);
  });
  return make_op<T>(name, std::move(shape), std::move(out), {a, b},
                    [a, b, n, na, nb, dfa, dfb](const std::vector<T>& g) {
                      T* ga = grad_of(a);
                      T* gb = grad_of(b);
                      const T* pa = a.data().data();
                      const T* pb = b.data().data();
                      for_each_pair(n, na, nb, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                        if (ga) ga[ia] += g[i] * dfa(pa[ia], pb[ib]);
                        if (gb) gb[ib] += g[i] * dfb(pa[ia], pb[ib]);
                      });
                    });
}

// Unary op whose derivative is expressed through the input x and output y.
template <typename T, typename F, typename D>
Tensor<T> unary(const char* name, const Tensor<T>& a, F f, D df) {
  const auto src = a.data();
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = f(src[i]);
  auto result = make_op<T>(name, a.shape(), std::move(out), {a}, nullptr);
  if (result.requires_grad()) {
    // The closure needs the output values; capture the node weakly to avoid a cycle.
    std::weak_ptr<detail::Node<T>> self = result.node();
    result.node()->backward = [a, self, df](const std::vector<T>& g) {
      T* ga = grad_of(a);
      if (!ga) return;
      auto out_node = self.lock();
      const auto& y = out_node->value;
      const T* x = a.data().data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
    };
  }
  return result;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  return unary<T>("add_scalar", a, [value](T x) { return x + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T value) {
  return unary<T>("mul_scalar", a, [value](T x) { return x * value; },
                  [value](T, T) { return value; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return unary<T>("sqrt", a, [](T x) { return std::sqrt(x); },
                  [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary<T>("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> sin(const Tensor<T>& a) {
  return unary<T>("sin", a, [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
}

template <typename T>
Tensor<T> cos(const Tensor<T>& a) {
  return unary<T>("cos", a, [](T x) { return std::cos(x); }, [](T x, T) { return -std::sin(x); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary<T>("tanh", a, [](T x) { return std::tanh(x); },
                  [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary<T>("sigmoid", a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
                  [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return unary<T>(
      "softplus", a,
      [](T x) { return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](T x, T) { return T(1) / (T(1) + std::exp(-x)); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary<T>("relu", a, [](T x) { return x > T(0) ? x : T(0); },
                  [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return unary<T>(
      "gelu", a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [](T x, T) {
        return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      });
}

template <typename T>
Tensor<T> scale_rows(const Tensor<T>& a, const Tensor<T>& s) {
  if (a.rank() != 2 || s.numel() != a.dim(0)) {
    throw TensorError(fmt::format("scale_rows: shapes {} and {} do not match",
                                  shape_to_string(a.shape()), shape_to_string(s.shape())));
  }
  const auto rows = a.dim(0);
  const auto cols = a.dim(1);
  const T* pa = a.data().data();
  const T* ps = s.data().data();
  std::vector<T> out(a.data().size());
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) out[r * cols + c] = pa[r * cols + c] * ps[r];
  return make_op<T>("scale_rows", a.shape(), std::move(out), {a, s},
                    [a, s, rows, cols](const std::vector<T>& g) {
                      T* ga = grad_of(a);
                      T* gs = grad_of(s);
                      const T* pa = a.data().data();
                      const T* ps = s.data().data();
                      for (std::int64_t r = 0; r < rows; ++r) {
                        T acc = T(0);
                        for (std::int64_t c = 0; c < cols; ++c) {
                          const auto i = r * cols + c;
                          if (ga) ga[i] += g[i] * ps[r];
                          acc += g[i] * pa[i];
                        }
                        if (gs) gs[r] += acc;
                      }
                    });
}

template <typename T>
Tensor<T> cross3(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape() || a.rank() == 0 || a.shape().back() != 3) {
    throw TensorError(fmt::format("cross3: shapes {} and {} must match with trailing 3",
                                  shape_to_string(a.shape()), shape_to_string(b.shape())));
  }
  const auto rows = a.numel() / 3;
  const T* x = a.data().data();
  const T* y = b.data().data();
  std::vector<T> out(a.data().size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* u = x + 3 * r;
    const T* v = y + 3 * r;
    T* o = out.data() + 3 * r;
    o[0] = u[1] * v[2] - u[2] * v[1];
    o[1] = u[2] * v[0] - u[0] * v[2];
    o[2] = u[0] * v[1] - u[1] * v[0];
  }
  return make_op<T>("cross3", a.shape(), std::move(out), {a, b}, [a, b, rows](const std::vector<T>& g) {
    T* ga = grad_of(a);
    T* gb = grad_of(b);
    const T* x = a.data().data();
    const T* y = b.data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* u = x + 3 * r;
      const T* v = y + 3 * r;
      const T* w = g.data() + 3 * r;
      // d(u x v) contracted with w: grad_u = v x w, grad_v = w x u.
      if (ga) {
        T* o = ga + 3 * r;
        o[0] += v[1] * w[2] - v[2] * w[1];
        o[1] += v[2] * w[0] - v[0] * w[2];
        o[2] += v[0] * w[1] - v[1] * w[0];
      }
      if (gb) {
        T* o = gb + 3 * r;
        o[0] += w[1] * u[2] - w[2] * u[1];
        o[1] += w[2] * u[0] - w[0] * u[2];
        o[2] += w[0] * u[1] - w[1] * u[0];
      }
    }
  });
}

template <typename T>
Tensor<T> inject_gradient(const Tensor<T>& x, std::span<const T> g) {
  if (static_cast<std::int64_t>(g.size()) != x.numel()) {
    throw TensorError(fmt::format("inject_gradient: {} gradient values for tensor of shape {}",
                                  g.size(), shape_to_string(x.shape())));
  }
  T value = T(0);
  for (T v : g) value += v * v;
  std::vector<T> seed(g.begin(), g.end());
  return make_op<T>("inject_gradient", {}, {T(0.5) * value}, {x},
                    [x, seed = std::move(seed)](const std::vector<T>& out) {
                      T* gx = grad_of(x);
                      if (!gx) return;
                      for (std::size_t i = 0; i < seed.size(); ++i) gx[i] += out[0] * seed[i];
                    });
}

#define ATOM_INSTANTIATE(T)                                                               \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                  \
  template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                  \
  template Tensor<T> neg<T>(const Tensor<T>&);                                            \
  template Tensor<T> exp<T>(const Tensor<T>&);                                            \
  template Tensor<T> log<T>(const Tensor<T>&);                                            \
  template Tensor<T> sqrt<T>(const Tensor<T>&);                                           \
  template Tensor<T> square<T>(const Tensor<T>&);                                         \
  template Tensor<T> sin<T>(const Tensor<T>&);                                            \
  template Tensor<T> cos<T>(const Tensor<T>&);                                            \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                           \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                        \
  template Tensor<T> softplus<T>(const Tensor<T>&);                                       \
  template Tensor<T> relu<T>(const Tensor<T>&);                                           \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                           \
  template Tensor<T> scale_rows<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> cross3<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> inject_gradient<T>(const Tensor<T>&, std::span<const T>);

ATOM_INSTANTIATE(float)
ATOM_INSTANTIATE(double)

#undef ATOM_INSTANTIATE

}  // namespace atom
