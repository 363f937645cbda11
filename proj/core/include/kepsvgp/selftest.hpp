#pragma once

#include <string>
#include <vector>

namespace kepsvgp::selftest {

struct SuiteResult {
  std::string name;
  bool passed = false;
  double seconds = 0.0;
  std::string detail;  // first failing assertion, or a summary
};

SuiteResult run_svd_suite();
/// `lambda_floor` exists so a removed floor is detectable as a failure.
SuiteResult run_kl_suite(double lambda_floor);
SuiteResult run_gradient_suite();
SuiteResult run_posterior_suite();
SuiteResult run_sampling_suite();

std::vector<SuiteResult> run_all(double lambda_floor = 1e-6);

}  // namespace kepsvgp::selftest
