#pragma once

#include "oodlab/gradcheck.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace oodlab {

struct GradCheckEntry {
  std::string objective;
  double max_rel_error = 0.0;
  int points = 0;
  int rejected = 0;  // draws discarded for lying too close to a relu kink
};

/// Every training objective, differentiated through a small MLP at `points`
/// random parameter draws.
std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed, int points = 10);

}  // namespace oodlab
