#include "atom/corpus.hpp"

#include <fmt/format.h>

#include <stdexcept>

namespace atom {

const std::vector<BodySpec>& body_catalog() {
  static const std::vector<BodySpec> bodies{
      {"red", "sphere", {0.85f, 0.15f, 0.15f}, {0.45, 0.45, 0.45}, 1.0, 1.0},
      {"blue", "cube", {0.15f, 0.30f, 0.85f}, {0.40, 0.40, 0.40}, 0.2, 0.2},
      {"green", "cylinder", {0.20f, 0.70f, 0.25f}, {0.38, 0.38, 0.45}, 0.2, 1.0},
      {"yellow", "diamond", {0.90f, 0.80f, 0.15f}, {0.50, 0.50, 0.50}, 1.6, 1.6},
      {"purple", "egg", {0.55f, 0.25f, 0.70f}, {0.32, 0.32, 0.50}, 1.0, 1.0},
      {"orange", "pillow", {0.95f, 0.50f, 0.10f}, {0.50, 0.50, 0.25}, 0.5, 0.4},
      {"cyan", "spindle", {0.15f, 0.75f, 0.80f}, {0.30, 0.30, 0.50}, 1.6, 1.0},
      {"pink", "barrel", {0.95f, 0.50f, 0.70f}, {0.40, 0.40, 0.45}, 0.4, 1.0},
  };
  return bodies;
}

const std::vector<AccessorySpec>& accessory_catalog() {
  static const std::vector<AccessorySpec> accessories{
      {"wearing a hat", AccessoryKind::hat, {0.10f, 0.10f, 0.10f}},
      {"holding a ball", AccessoryKind::ball, {0.95f, 0.95f, 0.30f}},
      {"carrying a box", AccessoryKind::box, {0.60f, 0.40f, 0.20f}},
      {"inside a ring", AccessoryKind::ring, {0.85f, 0.65f, 0.15f}},
      {"standing on a slab", AccessoryKind::slab, {0.30f, 0.30f, 0.38f}},
      {"under a halo", AccessoryKind::halo, {1.00f, 0.95f, 0.60f}},
      {"beside a pillar", AccessoryKind::pillar, {0.45f, 0.30f, 0.20f}},
      {"topped with a cone", AccessoryKind::cone, {0.95f, 0.95f, 0.95f}},
  };
  return accessories;
}

std::vector<PromptEntry> CompositionalGrid::seen() const {
  std::vector<PromptEntry> out;
  for (const auto& p : prompts)
    if (p.seen) out.push_back(p);
  return out;
}

std::vector<PromptEntry> CompositionalGrid::unseen() const {
  std::vector<PromptEntry> out;
  for (const auto& p : prompts)
    if (!p.seen) out.push_back(p);
  return out;
}

const PromptEntry* CompositionalGrid::find(const std::string& prompt) const {
  for (const auto& p : prompts)
    if (p.prompt == prompt) return &p;
  return nullptr;
}

CompositionalGrid make_compositional_grid(int rows, int cols) {
  const auto& bodies = body_catalog();
  const auto& accessories = accessory_catalog();
  if (rows < 2 || cols < 2) throw std::invalid_argument("compositional grid needs at least 2x2");
  if (rows > static_cast<int>(bodies.size()) || cols > static_cast<int>(accessories.size()))
    throw std::invalid_argument(fmt::format("compositional grid is limited to {}x{}", bodies.size(), accessories.size()));
  CompositionalGrid grid;
  grid.rows = rows;
  grid.cols = cols;
  for (int i = 0; i < rows; ++i) {
    const auto& b = bodies[static_cast<std::size_t>(i)];
    for (int j = 0; j < cols; ++j) {
      const auto& a = accessories[static_cast<std::size_t>(j)];
      grid.prompts.push_back({fmt::format("a {} {} {}", b.color_word, b.shape_word, a.phrase), i, j, i != j});
    }
  }
  return grid;
}

}  // namespace atom
