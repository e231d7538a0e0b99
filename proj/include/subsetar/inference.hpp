#pragma once

#include "subsetar/cue.hpp"

#include <optional>
#include <string>
#include <vector>

namespace subsetar {

enum class TestKind { ArC, Klm, T };

std::string to_string(TestKind kind);

struct TestResult {
  TestKind name = TestKind::ArC;
  double stat = 0.0;  // |t| for the t test
  int df = 0;
  double crit = 0.0;
  double pvalue = 1.0;
  bool reject = false;
  VectorXd nuisance_at_null;
  bool converged = true;   // nuisance optimizer status
  bool rank_flag = false;  // TSVD-protected projection was rank deficient
};

// Subset AR test of H0: beta = beta0 against chi2(d - d_gamma).
TestResult ar_test(const MomentModel& model, const VectorXd& beta0, const KernelSpec& kernel,
                   double alpha, const OptimOptions& opts = {});

// Score-type subset test built from the CUE first-order conditions at the
// nuisance minimizer: the moment vector is projected onto the tested
// block's orthogonalized Jacobian direction, chi2(d_beta) reference.
TestResult klm_test(const MomentModel& model, const VectorXd& beta0, const KernelSpec& kernel,
                    double alpha, const OptimOptions& opts = {});

// Conventional two-step GMM t test for one component of theta =
// (beta', gamma')': first step weighted by the instrument Gram, second
// step HAC-efficient, sandwich standard errors, normal critical value.
TestResult wald_t_test(const MomentModel& model, int component, double null_value,
                       const KernelSpec& kernel, double alpha);

struct ConfidenceSet {
  double alpha = 0.05;
  VectorXd grid;
  std::vector<bool> accepted;
  std::vector<bool> failed;  // optimizer failures, counted as not accepted
  std::vector<TestResult> results;  // per grid point, aligned with `grid`
  bool empty = true;
  double lower = 0.0;  // hull of the accepted grid points, endpoints
  double upper = 0.0;  // refined by bisection
  bool convex = true;
};

// Confidence set for a scalar beta by test inversion over a grid.
ConfidenceSet invert_ar_ci(const MomentModel& model, const KernelSpec& kernel, double alpha,
                           const VectorXd& beta_grid, const OptimOptions& opts = {});

struct ProjectionSearchOpts {
  double tol = 1e-4;
  double initial_step = 0.25;
  int max_doublings = 60;
  OptimOptions optim;
};

struct ProjectionInterval {
  bool empty = true;
  double lower = 0.0;
  double upper = 0.0;
  int df = 0;
  double crit = 0.0;
};

// Projection interval for one beta component when d_beta > 1: outer
// bisection on the component against the inner joint minimization over the
// remaining parameters, chi2(d - d_beta - d_gamma + 1) threshold.
ProjectionInterval project_ci(const MomentModel& model, const KernelSpec& kernel, double alpha,
                              int component, const ProjectionSearchOpts& search = {});

}  // namespace subsetar
