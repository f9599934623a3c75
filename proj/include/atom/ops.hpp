#pragma once

// Differentiable tensor operations.
//
// Broadcasting is limited to two cases: a scalar (numel 1) operand, and an
// operand whose shape is a suffix of the other's (a bias row broadcast over
// leading batch dimensions). Anything else needs an explicit reshape.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "atom/tensor.hpp"

namespace atom {

// Elementwise arithmetic.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T value);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T value);
template <typename T> Tensor<T> neg(const Tensor<T>& a);

// Elementwise math.
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> sin(const Tensor<T>& a);
template <typename T> Tensor<T> cos(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
// log(1 + e^x)
template <typename T> Tensor<T> softplus(const Tensor<T>& a);
// Subgradient 0 at the origin.
template <typename T> Tensor<T> relu(const Tensor<T>& a);
// Exact (erf) form.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);

// Shape manipulation.
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);  // rank 2
template <typename T> Tensor<T> permute(const Tensor<T>& a, std::span<const std::size_t> order);
template <typename T> Tensor<T> concat_last(std::span<const Tensor<T>> parts);
template <typename T> Tensor<T> slice_last(const Tensor<T>& a, std::int64_t start, std::int64_t length);
// a[index] along the leading axis: [N, ...] -> [...].
template <typename T> Tensor<T> select_first(const Tensor<T>& a, std::int64_t index);
// Rows of a rank-2 (or higher) tensor by index along axis 0.
template <typename T> Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::int64_t> rows);
// Inverse of gather_rows: out[rows[i]] += a[i]; out has `total_rows` rows.
template <typename T> Tensor<T> scatter_rows(const Tensor<T>& a, std::span<const std::int64_t> rows,
                                             std::int64_t total_rows);

// Reductions.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
// [..., K] -> [...]
template <typename T> Tensor<T> sum_last(const Tensor<T>& a);
// Softmax over the last axis.
template <typename T> Tensor<T> softmax_last(const Tensor<T>& a);

// Row scaling: a [N, K] times s [N] -> [N, K].
template <typename T> Tensor<T> scale_rows(const Tensor<T>& a, const Tensor<T>& s);
// Cross product along a trailing axis of size 3.
template <typename T> Tensor<T> cross3(const Tensor<T>& a, const Tensor<T>& b);

// [M, K] x [K, N] -> [M, N]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Cross-correlation, stride 1. input [N, C, H, W], kernel [O, C / groups, k, k].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::int64_t groups,
                 std::int64_t padding);

// input [N, C, H, W] plus bias [C] on every pixel.
template <typename T> Tensor<T> add_channel_bias(const Tensor<T>& input, const Tensor<T>& bias);

// Bilinear sample of plane [C, H, W] at coords [N, 2] in [-1, 1]; coords[:, 0]
// runs along H and coords[:, 1] along W. -1 and +1 address the centers of the
// first and last texels. Out-of-range coordinates clamp to the border.
// Returns [N, C].
template <typename T> Tensor<T> interp_bilinear(const Tensor<T>& plane, const Tensor<T>& coords);

// Vector-Jacobian product of interp_bilinear with respect to its coordinates:
// out[n, a] = sum_c g[n, c] * d interp(plane, coords)[n, c] / d coords[n, a].
// Differentiable with respect to plane and g; coords are treated as constant.
template <typename T>
Tensor<T> interp_bilinear_coord_vjp(const Tensor<T>& plane, const Tensor<T>& coords,
                                    const Tensor<T>& g);

// Scalar whose value is 0.5 * sum(g^2) and whose gradient with respect to x
// is exactly g. Used to inject an externally supplied d(loss)/d(x).
template <typename T> Tensor<T> inject_gradient(const Tensor<T>& x, std::span<const T> g);

}  // namespace atom
