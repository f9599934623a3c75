#pragma once

// Compositional prompt grid: colored superquadric bodies (rows) crossed with
// accessories (columns). "a red sphere wearing a hat" is body 0, accessory 0.
// The diagonal is held out.

#include <array>
#include <string>
#include <vector>

namespace atom {

struct BodySpec {
  std::string color_word;
  std::string shape_word;
  std::array<float, 3> albedo;
  std::array<double, 3> radii;
  double e_vertical;    // superquadric exponent along z
  double e_horizontal;  // superquadric exponent in the xy plane
};

enum class AccessoryKind { hat, ball, box, ring, slab, halo, pillar, cone };

struct AccessorySpec {
  std::string phrase;
  AccessoryKind kind;
  std::array<float, 3> albedo;
};

struct PromptEntry {
  std::string prompt;
  int body = 0;
  int accessory = 0;
  bool seen = true;
};

struct CompositionalGrid {
  int rows = 0;
  int cols = 0;
  std::vector<PromptEntry> prompts;  // row-major

  std::vector<PromptEntry> seen() const;
  std::vector<PromptEntry> unseen() const;
  const PromptEntry* find(const std::string& prompt) const;
};

const std::vector<BodySpec>& body_catalog();
const std::vector<AccessorySpec>& accessory_catalog();

// rows x cols grid over the first bodies and accessories; (i, i) held out.
CompositionalGrid make_compositional_grid(int rows, int cols);

}  // namespace atom
