#pragma once

// Generator, implicit heads and the NeuS sharpness bundled as one model.

#include <cstdint>

#include "atom/embedding.hpp"
#include "atom/field.hpp"
#include "atom/neus.hpp"
#include "atom/params.hpp"
#include "atom/triplane.hpp"

namespace atom {

struct ModelConfig {
  EmbeddingConfig embedding;
  TriplaneConfig triplane;
  HeadConfig heads;
};

template <typename T>
struct Model {
  Model(const ModelConfig& config, std::uint64_t seed);

  ModelConfig config;
  TriplaneGenerator<T> generator;
  ImplicitHeads<T> heads;
  Tensor<T> log_sharpness;  // s = exp(10 v)

  Tensor<T> sharpness() const { return sharpness_from_log(log_sharpness); }
  Triplane<T> triplane(const std::string& prompt) const {
    return generator.generate(embed(prompt, config.embedding));
  }

  ParamList<T> parameters() const;
  // Generator, SDF and color heads, sharpness.
  ParamList<T> stage1_parameters() const;
  // Generator and all three heads.
  ParamList<T> stage2_parameters() const;
};

// Same weights at another precision.
template <typename To, typename From>
Model<To> convert_model(const Model<From>& model) {
  Model<To> out(model.config, 0);
  auto dst = out.parameters();
  copy_param_values(model.parameters(), dst);
  return out;
}

}  // namespace atom
