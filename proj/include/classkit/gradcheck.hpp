#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace classkit {

struct GradCheckConfig {
  uint64_t seed = 7;
  int64_t instances = 20;   // fresh random instances per check
  double step = 1e-5;       // central-difference half step
  double tolerance = 1e-4;  // relative error bound
};

struct CheckResult {
  std::string name;
  int64_t instances = 0;
  int64_t elements = 0;  // finite-difference probes that counted
  int64_t skipped = 0;   // probes discarded as numerically unstable
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central finite differences against the analytic gradients, one named check
// per op family plus composite module checks and the full model. A probe
// whose two-step-size estimates disagree sits on a kink (relu, clamp) where
// the difference quotient itself is invalid; such probes are skipped and
// counted, and a check fails if more than a tenth of its probes were skipped.
std::vector<CheckResult> run_gradient_suite(const GradCheckConfig& cfg);

bool all_passed(const std::vector<CheckResult>& results);

// aligned table, one row per check, with a PASS/FAIL verdict column
void print_gradient_report(std::ostream& os,
                           const std::vector<CheckResult>& results);

}  // namespace classkit
