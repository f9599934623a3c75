#include "atom/model.hpp"

namespace atom {

namespace {

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t salt) { return seed * 0x9e3779b97f4a7c15ULL + salt; }

// The generator's token width always follows the embedder.
ModelConfig consistent(ModelConfig cfg) {
  cfg.triplane.embed_dim = cfg.embedding.dim;
  return cfg;
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed)
    : config(consistent(cfg)),
      generator(config.triplane, sub_seed(seed, 1)),
      heads(config.heads, config.triplane.channels, sub_seed(seed, 2)),
      log_sharpness(Tensor<T>::parameter({}, {static_cast<T>(initial_log_sharpness())})) {}

template <typename T>
ParamList<T> Model<T>::parameters() const {
  auto out = generator.parameters();
  for (auto& p : heads.parameters()) out.push_back(p);
  out.push_back({"neus.log_sharpness", log_sharpness});
  return out;
}

template <typename T>
ParamList<T> Model<T>::stage1_parameters() const {
  auto out = generator.parameters();
  for (auto& p : heads.sdf_parameters()) out.push_back(p);
  for (auto& p : heads.color_parameters()) out.push_back(p);
  out.push_back({"neus.log_sharpness", log_sharpness});
  return out;
}

template <typename T>
ParamList<T> Model<T>::stage2_parameters() const {
  auto out = generator.parameters();
  for (auto& p : heads.parameters()) out.push_back(p);
  return out;
}

template struct Model<float>;
template struct Model<double>;

}  // namespace atom
