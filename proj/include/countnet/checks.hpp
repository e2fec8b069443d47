#pragma once

// Release-gate check suites shared by the `check` CLI command and the
// acceptance tests: finite-difference gradient verification for every block
// and the full micro model, normalization invariants of the gate tensors,
// and token-permutation equivariance. All run at f64.

#include <string>
#include <vector>

#include "countnet/model.hpp"

namespace countnet {

struct CheckResult {
  std::string name;
  bool pass = false;
  double value = 0;  // the measured quantity (max error, max deviation, ...)
  std::string detail;
};

// 16x16 input, single stage; small enough for exhaustive finite differences.
ModelConfig micro_model_config();

// h and tol as in the gradient contract (defaults h=1e-4, tol=1e-4, f64).
// inject_sign_error is a harness hook: flips one analytic gradient of the
// first check so the failure path can be exercised end to end.
std::vector<CheckResult> run_gradient_checks(double h, double tol,
                                             bool inject_sign_error = false);

// n_inputs random token sets through GCAM/GEFS/GAFU: S rows, M, and gate
// slices must sum to 1 within tol; micro-model density outputs must be >= 0.
std::vector<CheckResult> run_normalization_checks(std::size_t n_inputs, double tol);

// n_pairs random (input, permutation) pairs through GCAM and GEFS.
std::vector<CheckResult> run_equivariance_checks(std::size_t n_pairs, double tol);

// True iff gcam(permute(x)) == permute(gcam(x)) within tol for this input.
bool gcam_permutation_check(const Tensor<double>& tokens,
                            const std::vector<std::size_t>& perm, double tol,
                            std::uint64_t param_seed);

}  // namespace countnet
