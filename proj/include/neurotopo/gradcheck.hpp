#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace neurotopo {

struct GradcheckRow {
  std::string op;
  int seeds{0};
  double max_rel_error{0.0};
};

// Central-difference check of every differentiable op in double precision on
// small random shapes. Relative errors use max(|analytic|, |numeric|, 1e-3) as
// the denominator.
std::vector<GradcheckRow> run_gradcheck(int seeds = 20, std::uint64_t base_seed = 1);

} // namespace neurotopo
