#include "atom/embedding.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "atom/binary_io.hpp"
#include "atom/hash.hpp"

namespace atom {

int PromptEmbedding::token_count() const {
  int n = 0;
  for (bool p : pad) n += p ? 0 : 1;
  return n;
}

std::vector<std::string> tokenize(std::string_view prompt) {
  std::istringstream stream{std::string(prompt)};
  std::vector<std::string> words;
  for (std::string w; stream >> w;) words.push_back(std::move(w));
  return words;
}

PromptEmbedding embed(std::string_view prompt, const EmbeddingConfig& config) {
  if (config.max_tokens < 1 || config.dim < 1) throw EmbeddingError("embedding dimensions must be positive");
  const auto words = tokenize(prompt);
  if (words.empty()) throw EmbeddingError("empty prompt");

  PromptEmbedding e;
  e.prompt = std::string(prompt);
  e.max_tokens = config.max_tokens;
  e.dim = config.dim;
  e.rows.assign(static_cast<std::size_t>(config.max_tokens) * config.dim, 0.0f);
  e.pad.assign(static_cast<std::size_t>(config.max_tokens), true);

  const int used = std::min<int>(config.max_tokens, static_cast<int>(words.size()));
  for (int i = 0; i < used; ++i) {
    std::mt19937_64 rng(mix64(fnv1a64(words[static_cast<std::size_t>(i)]) ^ mix64(config.seed)));
    std::normal_distribution<double> normal;
    std::vector<double> v(static_cast<std::size_t>(config.dim));
    double norm2 = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (int c = 0; c < config.dim; ++c)
      e.rows[static_cast<std::size_t>(i) * config.dim + c] = static_cast<float>(v[static_cast<std::size_t>(c)] * inv);
    e.pad[static_cast<std::size_t>(i)] = false;
  }
  return e;
}

std::vector<float> mean_embedding(const PromptEmbedding& e) {
  std::vector<double> acc(static_cast<std::size_t>(e.dim), 0.0);
  int count = 0;
  for (int i = 0; i < e.max_tokens; ++i) {
    if (e.pad[static_cast<std::size_t>(i)]) continue;
    ++count;
    for (int c = 0; c < e.dim; ++c) acc[static_cast<std::size_t>(c)] += e.row(i)[c];
  }
  if (count == 0) throw EmbeddingError("mean of an all-padding embedding");
  std::vector<float> out(acc.size());
  for (std::size_t c = 0; c < acc.size(); ++c) out[c] = static_cast<float>(acc[c] / count);
  return out;
}

std::string directional_prompt(std::string_view prompt, double azimuth_deg, double elevation_deg) {
  const char* suffix = ", overhead view";
  if (!(elevation_deg > 60.0)) {
    double az = std::fmod(azimuth_deg, 360.0);
    if (az > 180.0) az -= 360.0;
    if (az <= -180.0) az += 360.0;
    const double a = std::abs(az);
    suffix = a < 45.0 ? ", front view" : (a <= 135.0 ? ", side view" : ", back view");
  }
  return fmt::format("{}{}", prompt, suffix);
}

PromptEmbedding load_embedding(const std::filesystem::path& path, std::string prompt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EmbeddingError(fmt::format("cannot open embedding file {}", path.string()));
  PromptEmbedding e;
  try {
    e.max_tokens = static_cast<int>(le::get<std::uint32_t>(in));
    e.dim = static_cast<int>(le::get<std::uint32_t>(in));
    if (e.max_tokens < 1 || e.dim < 1 || e.max_tokens > 4096 || e.dim > 65536)
      throw EmbeddingError(fmt::format("implausible embedding header {}x{}", e.max_tokens, e.dim));
    e.rows.resize(static_cast<std::size_t>(e.max_tokens) * e.dim);
    le::get_floats(in, e.rows.data(), e.rows.size());
  } catch (const EmbeddingError&) {
    throw;
  } catch (const std::exception& ex) {
    throw EmbeddingError(fmt::format("{}: {}", path.string(), ex.what()));
  }
  e.prompt = std::move(prompt);
  e.pad.resize(static_cast<std::size_t>(e.max_tokens));
  for (int i = 0; i < e.max_tokens; ++i) {
    bool zero = true;
    for (int c = 0; c < e.dim && zero; ++c) zero = e.row(i)[c] == 0.0f;
    e.pad[static_cast<std::size_t>(i)] = zero;
  }
  return e;
}

void save_embedding(const PromptEmbedding& e, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EmbeddingError(fmt::format("cannot write embedding file {}", path.string()));
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(e.max_tokens));
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(e.dim));
  le::put_floats(out, e.rows.data(), e.rows.size());
  if (!out) throw EmbeddingError(fmt::format("write failed: {}", path.string()));
}

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace atom
