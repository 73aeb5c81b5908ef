#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "skupatch/config.hpp"

namespace skupatch {

struct SelftestCase {
  std::string name;
  ModelConfig config;
};

/// Decoder ablations (pyramid fusion, patch-aware cross-attention,
/// deformable attention), query counts 100/200/300 and the patch fusion modes,
/// each on a small 32×32 base configuration.
std::vector<SelftestCase> ablation_cases();

/// Runs one forward pass and loss per ablation case plus quick numeric oracle
/// checks, printing one line per check. Returns true when all pass.
bool run_selftest(std::ostream& out);

}  // namespace skupatch
