#pragma once

// Seeded random small instances of the two training objectives, checked
// against central differences in double precision.

#include <cstdint>
#include <string>

#include "wkcl/gradcheck.hpp"

namespace wkcl {

inline constexpr double kGradcheckEps = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-4;

/// L_map over random adapters (W_D, W_I) and batches.
GradCheckResult gradcheck_map_instance(std::uint64_t seed);

/// L_total over (gamma, beta, A, B, t_D, t_I) on a 3-sample batch per branch,
/// with KD against a perturbed snapshot.
GradCheckResult gradcheck_total_instance(std::uint64_t seed, bool soft_targets);

struct GradcheckSummary {
  int instances = 0;
  double max_map = 0;
  double max_total = 0;
  double max_total_soft = 0;
  std::uint64_t worst_seed = 0;
  std::string worst_objective;

  double max() const;
};

/// `instances` seeds per objective (the soft-target variant gets a tenth).
GradcheckSummary run_gradcheck_suite(int instances, std::uint64_t base_seed);

}  // namespace wkcl
