#pragma once

// Text-to-triplane network: a linear map from the averaged prompt embedding
// to three feature planes, refined by text-conditioned Triplane ConvNeXt
// blocks (cross-attention, 3D-aware convolution, depthwise conv + FFN).
//
// Planes are stored as one [3C, R, R] tensor in the order XY, XZ, YZ. Plane
// XY is indexed [c][x][y], XZ [c][x][z] and YZ [c][y][z].

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "atom/embedding.hpp"
#include "atom/params.hpp"
#include "atom/tensor.hpp"

namespace atom {

class GeneratorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TriplaneConfig {
  int channels = 16;     // C_T
  int resolution = 32;   // H_T = W_T
  int blocks = 2;        // N
  int heads = 4;
  int embed_dim = 64;    // C_e
  int aware_kernel = 3;
  // Adds the trailing "x = inp + x" of each block on top of the three inner
  // residuals. Off by default: with it, a zeroed block doubles its input.
  bool outer_residual = false;
};

template <typename T>
struct Triplane {
  Tensor<T> planes;  // [3C, R, R]
  int channels = 0;
  int resolution = 0;
};

template <typename T>
struct ConvNeXtBlock {
  // Cross-attention, shared across the three planes.
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;  // wq/wo [C, C], wk/wv [C_e, C], biases [C]
  // 3D-aware conv: [3C, 3C, k, k] in 3 groups over the gathered [9C] input.
  Tensor<T> aware_kernel, aware_bias;
  Tensor<T> dw_kernel, dw_bias;      // [3C, 1, 7, 7], [3C]
  Tensor<T> ffn1_kernel, ffn1_bias;  // [12C, C, 1, 1] in 3 groups, [12C]
  Tensor<T> ffn2_kernel, ffn2_bias;  // [3C, 4C, 1, 1] in 3 groups, [3C]
};

// Per plane and pixel, the plane's own C features followed by the row/column
// means of the other two planes along the shared axis. [3C, R, R] -> [9C, R, R].
template <typename T>
Tensor<T> triplane_axis_gather(const Tensor<T>& planes, int channels);

// Non-pad rows of an embedding as [n, C_e].
template <typename T>
Tensor<T> embedding_tokens(const PromptEmbedding& e);

template <typename T>
Tensor<T> embedding_mean(const PromptEmbedding& e);

template <typename T>
class TriplaneGenerator {
 public:
  TriplaneGenerator(const TriplaneConfig& config, std::uint64_t seed);

  const TriplaneConfig& config() const { return config_; }

  Triplane<T> project(const Tensor<T>& mean_emb) const;

  // Residuals; the caller adds them. `attention` receives the per-head
  // [3R^2, n] attention matrices when non-null.
  Tensor<T> cross_attention(const Tensor<T>& planes, const Tensor<T>& tokens, const ConvNeXtBlock<T>& block,
                            std::vector<Tensor<T>>* attention = nullptr) const;
  Tensor<T> aware3d_conv(const Tensor<T>& planes, const ConvNeXtBlock<T>& block) const;
  // Depthwise 7x7 step with its residual, then the channel MLP with its own;
  // returns the total residual.
  Tensor<T> convnext_ffn(const Tensor<T>& planes, const ConvNeXtBlock<T>& block) const;
  Tensor<T> depthwise(const Tensor<T>& planes, const ConvNeXtBlock<T>& block) const;
  Tensor<T> channel_mlp(const Tensor<T>& planes, const ConvNeXtBlock<T>& block) const;

  Tensor<T> run_block(const Tensor<T>& planes, const Tensor<T>& tokens, const ConvNeXtBlock<T>& block) const;

  Triplane<T> generate(const PromptEmbedding& e) const;

  ParamList<T> parameters() const;
  std::vector<ConvNeXtBlock<T>>& blocks() { return blocks_; }
  const std::vector<ConvNeXtBlock<T>>& blocks() const { return blocks_; }
  Tensor<T>& proj_weight() { return proj_w_; }
  Tensor<T>& proj_bias() { return proj_b_; }

 private:
  TriplaneConfig config_;
  Tensor<T> proj_w_;  // [C_e, 3C R^2]
  Tensor<T> proj_b_;  // [3C R^2]
  std::vector<ConvNeXtBlock<T>> blocks_;
};

}  // namespace atom
