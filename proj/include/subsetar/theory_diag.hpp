#pragma once

#include "subsetar/cue.hpp"
#include "subsetar/simulation.hpp"

#include <vector>

namespace subsetar {

// Numerical diagnostics built from the criterion's first-order-condition
// machinery at a known truth: the orthogonalized Jacobian direction, the
// TSVD-perturbed nuisance value, and the projection decomposition that
// bounds the subset AR statistic.
struct DiagReport {
  VectorXd gamma_true;
  VectorXd gamma_tilde;
  double ar_stat = 0.0;
  double q_at_tilde = 0.0;
  double m_term = 0.0;
  double varpi = 0.0;
  double foc_residual_norm = 0.0;
  int proj_rank = 0;
  double eps_used = 0.0;
  double proj_gap = 0.0;  // operator-norm gap between the two projection routes
};

// Relative default rule for the truncation threshold when eps <= 0:
// 1e-3 * max(largest eigenvalue of Gamma_hat, 1).
double default_truncation_eps(const MatrixXd& gamma_hat_matrix);

// d x d_gamma orthogonalized Jacobian direction at `point0`; satisfies
// grad_gamma = 2n gbar' omega^{-1/2} A exactly.
MatrixXd build_A(const MomentModel& model, const ParamPoint& point0, const KernelSpec& kernel);

// Nuisance value perturbed along the regularized first-order conditions:
// gamma0 - pinv_eps(Gamma_hat) A' omega^{-1/2} gbar0.
VectorXd perturbed_gamma(const MomentModel& model, const ParamPoint& point0, const KernelSpec& kernel,
                         double eps, DiagReport* partial = nullptr);

// Full decomposition at a known truth: q_at_tilde = m_term + varpi with the
// projection built at point0 and the sandwich evaluated at the perturbed
// nuisance. eps <= 0 selects the default rule.
DiagReport bound_decomposition(const MomentModel& model, const ParamPoint& point0,
                               const KernelSpec& kernel, double eps, const OptimOptions& opts = {});

struct NullCheckSummary {
  long reps = 0;
  int df = 0;
  double ks_distance = 0.0;
  double ks_critical_95 = 0.0;
  double empirical_q95 = 0.0;
  double chi2_q95 = 0.0;
  double bound_q95 = 0.0;      // 95th percentile of the m_term + varpi bound
  std::vector<double> draws;   // sorted projected quadratic forms at truth
  std::vector<double> bound_draws;  // sorted perturbation-bound statistics
};

// Simulates the design at its truth and compares the projected quadratic
// form at the true point against its chi-square reference.
NullCheckSummary null_distribution_check(const NkpcConfig& design, long n, long reps, double eps,
                                         const KernelSpec& kernel, int threads = 1);

}  // namespace subsetar
