#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedmobi {

struct DiagnosticResult {
  std::string name;
  double max_rel_err = 0.0;
  double bound = 0.0;
  bool pass = false;
};

// Central-difference gradient verification of every differentiable op plus
// the full side-network training loss on a synthetic packet. Deterministic in
// the seed. A check passes when the worst relative error over all parameter
// coordinates stays under the bound.
std::vector<DiagnosticResult> gradcheck_suite(std::uint64_t seed = 11, double bound = 1e-5);

}  // namespace fedmobi
