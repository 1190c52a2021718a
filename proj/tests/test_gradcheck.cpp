#include <sstream>
#include <string>
#include <vector>

#include "classkit/gradcheck.hpp"
#include "classkit/tensor.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace classkit;

TEST_CASE("a reduced sweep covers every op family and passes") {
  GradCheckConfig cfg;
  cfg.instances = 2;
  std::vector<CheckResult> results = run_gradient_suite(cfg);
  CHECK(results.size() == 22);
  for (const CheckResult& r : results) {
    CAPTURE(r.name);
    CHECK(r.pass);
    CHECK(r.elements > 0);
    CHECK(r.instances == 2);
    CHECK(r.max_rel_err < r.tolerance);
    // kink skips must stay a small minority of the probes
    CHECK(r.skipped * 10 <= (r.elements + r.skipped));
  }
  CHECK(all_passed(results));

  std::vector<CheckResult> doctored = results;
  doctored[3].pass = false;
  CHECK(!all_passed(doctored));
}

TEST_CASE("the report prints one verdict per check") {
  GradCheckConfig cfg;
  cfg.instances = 1;
  std::vector<CheckResult> results = run_gradient_suite(cfg);
  std::ostringstream os;
  print_gradient_report(os, results);
  std::string text = os.str();
  CHECK(text.find("full_model") != std::string::npos);
  CHECK(text.find("position_attention") != std::string::npos);
  CHECK(text.find("PASS") != std::string::npos);
  CHECK(text.find("FAIL") == std::string::npos);
}

TEST_CASE("branch fingerprints expose relu kink crossings") {
  uint64_t fp_neg = 0, fp_pos = 0;
  Tensor x = Tensor::from({-0.5}, {1});
  set_branch_fingerprint_sink(&fp_neg);
  (void)relu(x);
  set_branch_fingerprint_sink(&fp_pos);
  (void)relu(Tensor::from({0.5}, {1}));
  set_branch_fingerprint_sink(nullptr);
  CHECK(fp_neg != fp_pos);
  CHECK(!branch_fingerprint_armed());
}
