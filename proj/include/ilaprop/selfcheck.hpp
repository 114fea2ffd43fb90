#pragma once

#include <string>
#include <vector>

namespace ilaprop {

struct CheckResult {
  std::string name;
  bool pass = false;
  /// Worst error seen, in the units of the check.
  double error = 0.0;
  double tolerance = 0.0;
};

/// Finite-difference checks (eps 1e-5, tolerance 1e-4 relative) of every
/// differentiable operation, the SE block, ILA, the discriminator path and a
/// short end-to-end sequence.
std::vector<CheckResult> run_gradcheck_suite();

/// ILA and global attention against the nested-loop references, plus the
/// analytic cost formulas against instrumented MAC counts.
std::vector<CheckResult> run_oracle_suite();

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace ilaprop
