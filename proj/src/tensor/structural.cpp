#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "atom/ops.hpp"

namespace atom {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

std::int64_t trailing(const Shape& s) {
  if (s.empty()) throw TensorError("operation needs rank >= 1");
  return s.back();
}

}  // namespace

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw TensorError(fmt::format("reshape: {} -> {} changes element count",
                                  shape_to_string(a.shape()), shape_to_string(shape)));
  }
  return make_op<T>("reshape", std::move(shape), a.to_vector(), {a}, [a](const std::vector<T>& g) {
    if (T* ga = grad_of(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw TensorError("transpose needs a rank-2 tensor");
  const std::array<std::size_t, 2> order{1, 0};
  return permute(a, std::span<const std::size_t>(order));
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, std::span<const std::size_t> order) {
  const auto& in_shape = a.shape();
  const auto rank = in_shape.size();
  if (order.size() != rank) throw TensorError("permute: order length must equal rank");
  std::vector<bool> seen(rank, false);
  for (auto o : order) {
    if (o >= rank || seen[o]) throw TensorError("permute: order is not a permutation");
    seen[o] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[order[i]];
  std::vector<std::int64_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  // For each output element, the flat index of its source element.
  const auto n = a.numel();
  std::vector<std::int64_t> source(static_cast<std::size_t>(n));
  std::vector<std::int64_t> idx(rank, 0);
  for (std::int64_t flat = 0; flat < n; ++flat) {
    std::int64_t src = 0;
    for (std::size_t d = 0; d < rank; ++d) src += idx[d] * in_strides[order[d]];
    source[flat] = src;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  const T* pa = a.data().data();
  std::vector<T> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out[i] = pa[source[i]];
  return make_op<T>("permute", std::move(out_shape), std::move(out), {a},
                    [a, source = std::move(source)](const std::vector<T>& g) {
                      if (T* ga = grad_of(a))
                        for (std::size_t i = 0; i < g.size(); ++i) ga[source[i]] += g[i];
                    });
}

template <typename T>
Tensor<T> concat_last(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw TensorError("concat_last of nothing");
  Shape lead = parts[0].shape();
  lead.pop_back();
  const auto rows = shape_numel(lead);
  std::vector<std::int64_t> widths;
  std::int64_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    const auto w = trailing(s);
    s.pop_back();
    if (s != lead) {
      throw TensorError(fmt::format("concat_last: leading shape {} does not match {}",
                                    shape_to_string(s), shape_to_string(lead)));
    }
    widths.push_back(w);
    total += w;
  }
  std::vector<T> out(static_cast<std::size_t>(rows * total));
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].data().data();
    const auto w = widths[k];
    for (std::int64_t r = 0; r < rows; ++r)
      std::copy_n(src + r * w, w, out.data() + r * total + offset);
    offset += w;
  }
  Shape shape = lead;
  shape.push_back(total);
  std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
  auto result = make_op<T>("concat_last", std::move(shape), std::move(out), {}, nullptr);
  if (GradMode::enabled()) {
    auto& node = *result.node();
    for (const auto& p : inputs)
      if (p.requires_grad()) node.parents.push_back(p.node());
    if (!node.parents.empty()) {
      node.requires_grad = true;
      node.backward = [inputs, widths, rows, total](const std::vector<T>& g) {
        std::int64_t off = 0;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          const auto w = widths[k];
          if (T* gp = grad_of(inputs[k])) {
            for (std::int64_t r = 0; r < rows; ++r)
              for (std::int64_t c = 0; c < w; ++c) gp[r * w + c] += g[r * total + off + c];
          }
          off += w;
        }
      };
    }
  }
  return result;
}

template <typename T>
Tensor<T> slice_last(const Tensor<T>& a, std::int64_t start, std::int64_t length) {
  Shape shape = a.shape();
  const auto width = trailing(shape);
  if (start < 0 || length < 0 || start + length > width) {
    throw TensorError(fmt::format("slice_last: [{}, {}) outside width {}", start, start + length, width));
  }
  shape.back() = length;
  const auto rows = a.numel() / std::max<std::int64_t>(width, 1);
  const T* pa = a.data().data();
  std::vector<T> out(static_cast<std::size_t>(rows * length));
  for (std::int64_t r = 0; r < rows; ++r)
    std::copy_n(pa + r * width + start, length, out.data() + r * length);
  return make_op<T>("slice_last", std::move(shape), std::move(out), {a},
                    [a, rows, width, start, length](const std::vector<T>& g) {
                      if (T* ga = grad_of(a))
                        for (std::int64_t r = 0; r < rows; ++r)
                          for (std::int64_t c = 0; c < length; ++c)
                            ga[r * width + start + c] += g[r * length + c];
                    });
}

template <typename T>
Tensor<T> select_first(const Tensor<T>& a, std::int64_t index) {
  Shape shape = a.shape();
  if (shape.empty() || index < 0 || index >= shape[0]) {
    throw TensorError(fmt::format("select_first: index {} out of range for {}", index,
                                  shape_to_string(shape)));
  }
  shape.erase(shape.begin());
  const auto block = shape_numel(shape);
  const T* pa = a.data().data() + index * block;
  std::vector<T> out(pa, pa + block);
  return make_op<T>("select_first", std::move(shape), std::move(out), {a},
                    [a, index, block](const std::vector<T>& g) {
                      if (T* ga = grad_of(a))
                        for (std::int64_t i = 0; i < block; ++i) ga[index * block + i] += g[i];
                    });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::int64_t> rows) {
  Shape shape = a.shape();
  if (shape.empty()) throw TensorError("gather_rows on a scalar");
  const auto n = shape[0];
  const auto block = a.numel() / std::max<std::int64_t>(n, 1);
  std::vector<std::int64_t> index(rows.begin(), rows.end());
  const T* pa = a.data().data();
  std::vector<T> out(index.size() * static_cast<std::size_t>(block));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= n) {
      throw TensorError(fmt::format("gather_rows: row {} out of range [0, {})", index[i], n));
    }
    std::copy_n(pa + index[i] * block, block, out.data() + i * block);
  }
  shape[0] = static_cast<std::int64_t>(index.size());
  return make_op<T>("gather_rows", std::move(shape), std::move(out), {a},
                    [a, block, index = std::move(index)](const std::vector<T>& g) {
                      if (T* ga = grad_of(a))
                        for (std::size_t i = 0; i < index.size(); ++i)
                          for (std::int64_t c = 0; c < block; ++c)
                            ga[index[i] * block + c] += g[i * block + c];
                    });
}

template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& a, std::span<const std::int64_t> rows, std::int64_t total_rows) {
  Shape shape = a.shape();
  if (shape.empty() || shape[0] != static_cast<std::int64_t>(rows.size())) {
    throw TensorError(fmt::format("scatter_rows: {} indices for shape {}", rows.size(),
                                  shape_to_string(shape)));
  }
  const auto block = rows.empty() ? shape_numel(Shape(shape.begin() + 1, shape.end()))
                                  : a.numel() / static_cast<std::int64_t>(rows.size());
  std::vector<std::int64_t> index(rows.begin(), rows.end());
  const T* pa = a.data().data();
  std::vector<T> out(static_cast<std::size_t>(total_rows * block), T(0));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= total_rows) {
      throw TensorError(fmt::format("scatter_rows: row {} out of range [0, {})", index[i], total_rows));
    }
    for (std::int64_t c = 0; c < block; ++c) out[index[i] * block + c] += pa[i * block + c];
  }
  shape[0] = total_rows;
  return make_op<T>("scatter_rows", std::move(shape), std::move(out), {a},
                    [a, block, index = std::move(index)](const std::vector<T>& g) {
                      if (T* ga = grad_of(a))
                        for (std::size_t i = 0; i < index.size(); ++i)
                          for (std::int64_t c = 0; c < block; ++c)
                            ga[i * block + c] += g[index[i] * block + c];
                    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  const auto d = a.data();
  T total = T(0);
  for (T v : d) total += v;
  return make_op<T>("sum", {}, {total}, {a}, [a](const std::vector<T>& g) {
    if (T* ga = grad_of(a)) {
      const auto n = a.numel();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += g[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw TensorError("mean of empty tensor");
  return mul_scalar(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> sum_last(const Tensor<T>& a) {
  Shape shape = a.shape();
  const auto width = trailing(shape);
  shape.pop_back();
  const auto rows = shape_numel(shape);
  const T* pa = a.data().data();
  std::vector<T> out(static_cast<std::size_t>(rows), T(0));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < width; ++c) out[r] += pa[r * width + c];
  return make_op<T>("sum_last", std::move(shape), std::move(out), {a},
                    [a, rows, width](const std::vector<T>& g) {
                      if (T* ga = grad_of(a))
                        for (std::int64_t r = 0; r < rows; ++r)
                          for (std::int64_t c = 0; c < width; ++c) ga[r * width + c] += g[r];
                    });
}

template <typename T>
Tensor<T> softmax_last(const Tensor<T>& a) {
  const auto width = trailing(a.shape());
  const auto rows = a.numel() / std::max<std::int64_t>(width, 1);
  const T* pa = a.data().data();
  std::vector<T> out(a.data().size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* x = pa + r * width;
    T* y = out.data() + r * width;
    const T peak = *std::max_element(x, x + width);
    T z = T(0);
    for (std::int64_t c = 0; c < width; ++c) z += (y[c] = std::exp(x[c] - peak));
    for (std::int64_t c = 0; c < width; ++c) y[c] /= z;
  }
  auto result = make_op<T>("softmax_last", a.shape(), std::move(out), {a}, nullptr);
  if (result.requires_grad()) {
    std::weak_ptr<detail::Node<T>> self = result.node();
    result.node()->backward = [a, self, rows, width](const std::vector<T>& g) {
      T* ga = grad_of(a);
      if (!ga) return;
      const auto& y = self.lock()->value;
      for (std::int64_t r = 0; r < rows; ++r) {
        T dot = T(0);
        for (std::int64_t c = 0; c < width; ++c) dot += g[r * width + c] * y[r * width + c];
        for (std::int64_t c = 0; c < width; ++c)
          ga[r * width + c] += y[r * width + c] * (g[r * width + c] - dot);
      }
    };
  }
  return result;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw TensorError(fmt::format("matmul: incompatible shapes {} x {}", shape_to_string(a.shape()),
                                  shape_to_string(b.shape())));
  }
  const auto m = a.dim(0);
  const auto k = a.dim(1);
  const auto n = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  MutMap<T>(out.data(), m, n).noalias() =
      ConstMap<T>(a.data().data(), m, k) * ConstMap<T>(b.data().data(), k, n);
  return make_op<T>("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, k, n](const std::vector<T>& g) {
    ConstMap<T> gm(g.data(), m, n);
    if (T* ga = grad_of(a)) MutMap<T>(ga, m, k).noalias() += gm * ConstMap<T>(b.data().data(), k, n).transpose();
    if (T* gb = grad_of(b)) MutMap<T>(gb, k, n).noalias() += ConstMap<T>(a.data().data(), m, k).transpose() * gm;
  });
}

#define ATOM_INSTANTIATE(T)                                                                      \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                        \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                             \
  template Tensor<T> permute<T>(const Tensor<T>&, std::span<const std::size_t>);                 \
  template Tensor<T> concat_last<T>(std::span<const Tensor<T>>);                                 \
  template Tensor<T> slice_last<T>(const Tensor<T>&, std::int64_t, std::int64_t);                \
  template Tensor<T> select_first<T>(const Tensor<T>&, std::int64_t);                            \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const std::int64_t>);            \
  template Tensor<T> scatter_rows<T>(const Tensor<T>&, std::span<const std::int64_t>, std::int64_t); \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                   \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                  \
  template Tensor<T> sum_last<T>(const Tensor<T>&);                                              \
  template Tensor<T> softmax_last<T>(const Tensor<T>&);                                          \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);

ATOM_INSTANTIATE(float)
ATOM_INSTANTIATE(double)

#undef ATOM_INSTANTIATE

}  // namespace atom
