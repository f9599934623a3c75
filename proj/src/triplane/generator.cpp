#include <fmt/format.h>

#include <array>
#include <cmath>

#include "atom/ops.hpp"
#include "atom/triplane.hpp"

namespace atom {

namespace {

// Where the two gathered vectors of each plane come from: a source plane,
// whether it is reduced along its columns (row mean) or rows (column mean),
// and whether the destination pixel's i or j picks the entry.
struct GatherSource {
  int plane;
  bool row_mean;
  bool by_i;
};

constexpr std::array<std::array<GatherSource, 2>, 3> kGather{{
    {{{1, true, true}, {2, true, false}}},    // XY(x, y): XZ row x, YZ row y
    {{{0, true, true}, {2, false, false}}},   // XZ(x, z): XY row x, YZ column z
    {{{0, false, true}, {1, false, false}}},  // YZ(y, z): XY column y, XZ column z
}};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
Tensor<T> planes_to_tokens(const Tensor<T>& planes, int c, int r) {
  static constexpr std::array<std::size_t, 3> order{0, 2, 1};
  return reshape(permute(reshape(planes, {3, c, r * r}), std::span<const std::size_t>(order)), {3 * r * r, c});
}

template <typename T>
Tensor<T> tokens_to_planes(const Tensor<T>& tokens, int c, int r) {
  static constexpr std::array<std::size_t, 3> order{0, 2, 1};
  return reshape(permute(reshape(tokens, {3, r * r, c}), std::span<const std::size_t>(order)), {3 * c, r, r});
}

}  // namespace

template <typename T>
Tensor<T> triplane_axis_gather(const Tensor<T>& planes, int channels) {
  if (planes.rank() != 3 || planes.dim(0) != 3 * channels || planes.dim(1) != planes.dim(2))
    throw GeneratorError(fmt::format("triplane_axis_gather: expected [3*{}, R, R], got {}", channels,
                                     shape_to_string(planes.shape())));
  const std::int64_t c_count = channels, r = planes.dim(1);
  const T inv_r = T(1) / static_cast<T>(r);
  const T* p = planes.data().data();
  auto at = [r, c_count](std::int64_t k, std::int64_t c, std::int64_t i, std::int64_t j) {
    return ((k * c_count + c) * r + i) * r + j;
  };

  // means[k][row_mean][c][index]
  std::vector<T> means(static_cast<std::size_t>(3 * 2 * c_count * r), T(0));
  auto mean_at = [r, c_count](std::int64_t k, bool row_mean, std::int64_t c, std::int64_t idx) {
    return ((k * 2 + (row_mean ? 0 : 1)) * c_count + c) * r + idx;
  };
  for (std::int64_t k = 0; k < 3; ++k)
    for (std::int64_t c = 0; c < c_count; ++c)
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < r; ++j) {
          const T v = p[at(k, c, i, j)] * inv_r;
          means[mean_at(k, true, c, i)] += v;
          means[mean_at(k, false, c, j)] += v;
        }

  const std::int64_t out_c = 9 * c_count;
  std::vector<T> out(static_cast<std::size_t>(out_c * r * r));
  auto out_at = [r](std::int64_t oc, std::int64_t i, std::int64_t j) { return (oc * r + i) * r + j; };
  for (std::int64_t k = 0; k < 3; ++k)
    for (std::int64_t c = 0; c < c_count; ++c)
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < r; ++j) {
          out[out_at(3 * c_count * k + c, i, j)] = p[at(k, c, i, j)];
          for (int s = 0; s < 2; ++s) {
            const auto& src = kGather[k][s];
            out[out_at(3 * c_count * k + (s + 1) * c_count + c, i, j)] =
                means[mean_at(src.plane, src.row_mean, c, src.by_i ? i : j)];
          }
        }

  return make_op<T>("triplane_axis_gather", {out_c, r, r}, std::move(out), {planes},
                    [planes, c_count, r, inv_r, at, mean_at, out_at](const std::vector<T>& g) {
                      T* gp = grad_of(planes);
                      if (!gp) return;
                      std::vector<T> gmeans(static_cast<std::size_t>(3 * 2 * c_count * r), T(0));
                      for (std::int64_t k = 0; k < 3; ++k)
                        for (std::int64_t c = 0; c < c_count; ++c)
                          for (std::int64_t i = 0; i < r; ++i)
                            for (std::int64_t j = 0; j < r; ++j) {
                              gp[at(k, c, i, j)] += g[out_at(3 * c_count * k + c, i, j)];
                              for (int s = 0; s < 2; ++s) {
                                const auto& src = kGather[k][s];
                                gmeans[mean_at(src.plane, src.row_mean, c, src.by_i ? i : j)] +=
                                    g[out_at(3 * c_count * k + (s + 1) * c_count + c, i, j)];
                              }
                            }
                      for (std::int64_t k = 0; k < 3; ++k)
                        for (std::int64_t c = 0; c < c_count; ++c)
                          for (std::int64_t i = 0; i < r; ++i)
                            for (std::int64_t j = 0; j < r; ++j)
                              gp[at(k, c, i, j)] +=
                                  (gmeans[mean_at(k, true, c, i)] + gmeans[mean_at(k, false, c, j)]) * inv_r;
                    });
}

template <typename T>
Tensor<T> embedding_tokens(const PromptEmbedding& e) {
  std::vector<T> rows;
  std::int64_t n = 0;
  for (int i = 0; i < e.max_tokens; ++i) {
    if (e.pad[static_cast<std::size_t>(i)]) continue;
    ++n;
    for (int c = 0; c < e.dim; ++c) rows.push_back(static_cast<T>(e.row(i)[c]));
  }
  if (n == 0) throw EmbeddingError("embedding has no tokens");
  return Tensor<T>::from_vector({n, e.dim}, std::move(rows));
}

template <typename T>
Tensor<T> embedding_mean(const PromptEmbedding& e) {
  const auto m = mean_embedding(e);
  return Tensor<T>::from_vector({e.dim}, std::vector<T>(m.begin(), m.end()));
}

template <typename T>
TriplaneGenerator<T>::TriplaneGenerator(const TriplaneConfig& config, std::uint64_t seed) : config_(config) {
  const int c = config.channels, r = config.resolution, ce = config.embed_dim;
  if (c < 1 || r < 1 || ce < 1 || config.blocks < 0) throw GeneratorError("invalid triplane dimensions");
  if (config.heads < 1 || c % config.heads != 0)
    throw GeneratorError(fmt::format("{} heads do not divide {} channels", config.heads, c));
  if (config.aware_kernel % 2 == 0) throw GeneratorError("3D-aware kernel size must be odd");
  std::mt19937_64 rng(seed);
  auto bound = [](double fan_in) { return 1.0 / std::sqrt(fan_in); };
  const std::int64_t flat = 3LL * c * r * r;
  proj_w_ = uniform_param<T>({ce, flat}, bound(ce), rng);
  proj_b_ = zero_param<T>({flat});
  const int k = config.aware_kernel;
  for (int b = 0; b < config.blocks; ++b) {
    ConvNeXtBlock<T> blk;
    blk.wq = uniform_param<T>({c, c}, bound(c), rng);
    blk.bq = zero_param<T>({c});
    blk.wk = uniform_param<T>({ce, c}, bound(ce), rng);
    blk.bk = zero_param<T>({c});
    blk.wv = uniform_param<T>({ce, c}, bound(ce), rng);
    blk.bv = zero_param<T>({c});
    blk.wo = zero_param<T>({c, c});
    blk.bo = zero_param<T>({c});
    // A zero kernel under the ReLU would never receive gradient, so this
    // one starts small instead of at zero.
    blk.aware_kernel = uniform_param<T>({3 * c, 3 * c, k, k}, 0.1 * bound(3.0 * c * k * k), rng);
    blk.aware_bias = zero_param<T>({3 * c});
    blk.dw_kernel = zero_param<T>({3 * c, 1, 7, 7});
    blk.dw_bias = zero_param<T>({3 * c});
    blk.ffn1_kernel = uniform_param<T>({12 * c, c, 1, 1}, bound(c), rng);
    blk.ffn1_bias = zero_param<T>({12 * c});
    blk.ffn2_kernel = zero_param<T>({3 * c, 4 * c, 1, 1});
    blk.ffn2_bias = zero_param<T>({3 * c});
    blocks_.push_back(std::move(blk));
  }
}

template <typename T>
Triplane<T> TriplaneGenerator<T>::project(const Tensor<T>& mean_emb) const {
  const int c = config_.channels, r = config_.resolution;
  if (mean_emb.numel() != config_.embed_dim)
    throw GeneratorError(fmt::format("expected a {}-dim embedding, got {}", config_.embed_dim, mean_emb.numel()));
  for (T v : mean_emb.data())
    if (!std::isfinite(v)) throw GeneratorError("non-finite embedding");
  auto flat = add(matmul(reshape(mean_emb, {1, config_.embed_dim}), proj_w_), proj_b_);
  return {reshape(flat, {3 * c, r, r}), c, r};
}

template <typename T>
Tensor<T> TriplaneGenerator<T>::cross_attention(const Tensor<T>& planes, const Tensor<T>& tokens,
                                                const ConvNeXtBlock<T>& block,
                                                std::vector<Tensor<T>>* attention) const {
  const int c = config_.channels, r = config_.resolution, heads = config_.heads;
  const int d = c / heads;
  if (tokens.rank() != 2 || tokens.dim(0) < 1 || tokens.dim(1) != config_.embed_dim)
    throw GeneratorError(fmt::format("cross_attention: bad token matrix {}", shape_to_string(tokens.shape())));
  auto x = planes_to_tokens(planes, c, r);
  auto q = add(matmul(x, block.wq), block.bq);
  auto kmat = add(matmul(tokens, block.wk), block.bk);
  auto vmat = add(matmul(tokens, block.wv), block.bv);
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  std::vector<Tensor<T>> per_head;
  for (int h = 0; h < heads; ++h) {
    auto qh = slice_last(q, h * d, d);
    auto kh = slice_last(kmat, h * d, d);
    auto vh = slice_last(vmat, h * d, d);
    auto weights = softmax_last(mul_scalar(matmul(qh, transpose(kh)), scale));
    if (attention) attention->push_back(weights);
    per_head.push_back(matmul(weights, vh));
  }
  auto merged = heads == 1 ? per_head[0] : concat_last(std::span<const Tensor<T>>(per_head));
  auto out = add(matmul(merged, block.wo), block.bo);
  return tokens_to_planes(out, c, r);
}

template <typename T>
Tensor<T> TriplaneGenerator<T>::aware3d_conv(const Tensor<T>& planes, const ConvNeXtBlock<T>& block) const {
  const int c = config_.channels, r = config_.resolution;
  auto gathered = reshape(triplane_axis_gather(planes, c), {1, 9 * c, r, r});
  auto conv = add_channel_bias(conv2d(gathered, block.aware_kernel, 3, config_.aware_kernel / 2), block.aware_bias);
  return reshape(relu(conv), {3 * c, r, r});
}

template <typename T>
Tensor<T> TriplaneGenerator<T>::depthwise(const Tensor<T>& planes, const ConvNeXtBlock<T>& block) const {
  const int c = config_.channels, r = config_.resolution;
  auto x = reshape(planes, {1, 3 * c, r, r});
  return reshape(add_channel_bias(conv2d(x, block.dw_kernel, 3 * c, 3), block.dw_bias), {3 * c, r, r});
}

template <typename T>
Tensor<T> TriplaneGenerator<T>::channel_mlp(const Tensor<T>& planes, const ConvNeXtBlock<T>& block) const {
  const int c = config_.channels, r = config_.resolution;
  auto x = reshape(planes, {1, 3 * c, r, r});
  auto hidden = gelu(add_channel_bias(conv2d(x, block.ffn1_kernel, 3, 0), block.ffn1_bias));
  return reshape(add_channel_bias(conv2d(hidden, block.ffn2_kernel, 3, 0), block.ffn2_bias), {3 * c, r, r});
}

template <typename T>
Tensor<T> TriplaneGenerator<T>::convnext_ffn(const Tensor<T>& planes, const ConvNeXtBlock<T>& block) const {
  auto dw = depthwise(planes, block);
  auto mixed = add(planes, dw);
  return add(dw, channel_mlp(mixed, block));
}

template <typename T>
Tensor<T> TriplaneGenerator<T>::run_block(const Tensor<T>& planes, const Tensor<T>& tokens,
                                          const ConvNeXtBlock<T>& block) const {
  auto x = add(planes, cross_attention(planes, tokens, block));
  x = add(x, aware3d_conv(x, block));
  x = add(x, convnext_ffn(x, block));
  if (config_.outer_residual) x = add(planes, x);
  return x;
}

template <typename T>
Triplane<T> TriplaneGenerator<T>::generate(const PromptEmbedding& e) const {
  if (e.dim != config_.embed_dim)
    throw GeneratorError(fmt::format("embedding width {} does not match generator width {}", e.dim, config_.embed_dim));
  auto tp = project(embedding_mean<T>(e));
  if (!all_finite(tp.planes)) throw GeneratorError("non-finite value in the projected triplane");
  const auto tokens = embedding_tokens<T>(e);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    tp.planes = run_block(tp.planes, tokens, blocks_[b]);
    if (!all_finite(tp.planes)) throw GeneratorError(fmt::format("non-finite value after triplane block {}", b));
  }
  return tp;
}

template <typename T>
ParamList<T> TriplaneGenerator<T>::parameters() const {
  ParamList<T> out{{"triplane.proj.weight", proj_w_}, {"triplane.proj.bias", proj_b_}};
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto& blk = blocks_[b];
    const auto p = fmt::format("triplane.block{}.", b);
    const std::pair<const char*, const Tensor<T>*> named[] = {
        {"attn.wq", &blk.wq},           {"attn.bq", &blk.bq},         {"attn.wk", &blk.wk},
        {"attn.bk", &blk.bk},           {"attn.wv", &blk.wv},         {"attn.bv", &blk.bv},
        {"attn.wo", &blk.wo},           {"attn.bo", &blk.bo},         {"aware.kernel", &blk.aware_kernel},
        {"aware.bias", &blk.aware_bias}, {"dw.kernel", &blk.dw_kernel}, {"dw.bias", &blk.dw_bias},
        {"ffn1.kernel", &blk.ffn1_kernel}, {"ffn1.bias", &blk.ffn1_bias}, {"ffn2.kernel", &blk.ffn2_kernel},
        {"ffn2.bias", &blk.ffn2_bias},
    };
    for (const auto& [name, tensor] : named) out.push_back({p + name, *tensor});
  }
  return out;
}

#define ATOM_INSTANTIATE(T)                                                  \
  template Tensor<T> triplane_axis_gather<T>(const Tensor<T>&, int);         \
  template Tensor<T> embedding_tokens<T>(const PromptEmbedding&);            \
  template Tensor<T> embedding_mean<T>(const PromptEmbedding&);              \
  template class TriplaneGenerator<T>;

ATOM_INSTANTIATE(float)
ATOM_INSTANTIATE(double)

#undef ATOM_INSTANTIATE

}  // namespace atom
