#pragma once

// Hashed-word prompt embeddings.
//
// Each whitespace-separated word seeds a pseudo-random unit vector. The
// result has a fixed number of rows; rows past the word count are zero and
// flagged as padding.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace atom {

class EmbeddingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EmbeddingConfig {
  int max_tokens = 16;  // L_e
  int dim = 64;         // C_e
  std::uint64_t seed = 0;
};

struct PromptEmbedding {
  std::string prompt;
  int max_tokens = 0;
  int dim = 0;
  std::vector<float> rows;  // max_tokens x dim, row-major
  std::vector<bool> pad;    // per row

  int token_count() const;
  const float* row(int i) const { return rows.data() + static_cast<std::size_t>(i) * dim; }
};

// Whitespace-separated words, in order.
std::vector<std::string> tokenize(std::string_view prompt);

PromptEmbedding embed(std::string_view prompt, const EmbeddingConfig& config);

// Mean over non-pad rows.
std::vector<float> mean_embedding(const PromptEmbedding& e);

// Appends ", front view", ", side view", ", back view" or ", overhead view".
// Overhead above 60 degrees of elevation; otherwise the azimuth sector picks
// the suffix: |az| < 45 front, 45..135 side, beyond 135 back.
std::string directional_prompt(std::string_view prompt, double azimuth_deg, double elevation_deg);

// Externally supplied embedding: u32 rows, u32 dim, then rows*dim f32, all
// little-endian. All-zero rows are treated as padding.
PromptEmbedding load_embedding(const std::filesystem::path& path, std::string prompt = {});
void save_embedding(const PromptEmbedding& e, const std::filesystem::path& path);

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b);

}  // namespace atom
