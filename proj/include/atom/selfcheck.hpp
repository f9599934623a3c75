#pragma once

// Finite-difference suite over every tensor op and the two render pipelines,
// shared by `atom gradcheck` and the acceptance binary. Runs in 64-bit.

#include <functional>
#include <string>
#include <vector>

namespace atom {

struct SelfCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t evaluations = 0;
};

struct SelfCheckOptions {
  bool ops = true;
  bool stage1 = true;  // generator + heads + NeuS at 8x8, 8 samples, C_T = 4
  bool stage2 = true;  // one tet -> one triangle -> raster -> shade
  std::uint64_t seed = 3;
  std::function<void(const SelfCheckResult&)> progress;
};

std::vector<SelfCheckResult> run_selfcheck(const SelfCheckOptions& options = {});

}  // namespace atom
