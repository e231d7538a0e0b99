#pragma once

#include "subsetar/moments.hpp"
#include "subsetar/numerics.hpp"

#include <Eigen/Core>

namespace subsetar {

enum class KernelKind { Bartlett, Parzen, QuadraticSpectral, TruncationZero };

std::string to_string(KernelKind kind);

// Kernel class restricted to symmetric kernels with k(0) = 1, |k| <= 1 and
// nonnegative spectral density. bandwidth <= 0 selects the default rule
// floor(4 (n/100)^{2/9}) at estimation time; TruncationZero ignores it.
struct KernelSpec {
  KernelKind kind = KernelKind::Bartlett;
  double bandwidth = 0.0;

  double weight(double x) const;
  // weight applied to lag j given sample size n (resolves the bandwidth)
  double lag_weight(long j, long n) const;
  // first lag with zero weight, or n when the support is unbounded
  long lag_cutoff(long n) const;
  double resolved_bandwidth(long n) const;
};

// Long-run covariance of sqrt(n)-scaled average moments together with its
// spectral factorization. Immutable value.
struct HacEstimate {
  MatrixXd omega;
  VectorXd eigenvalues;   // descending, negatives clipped at zero
  MatrixXd eigenvectors;
  double min_eigenvalue_raw = 0.0;  // before clipping
  bool clipped = false;

  double condition() const { return eigenvalues(0) / eigenvalues(eigenvalues.size() - 1); }
  VectorXd solve(const VectorXd& b) const;  // omega^{-1} b
  MatrixXd solve_matrix(const MatrixXd& b) const;
  MatrixXd inverse() const;
  MatrixXd inverse_sqrt() const;
};

// n^{-1} sum_t sum_s k((t-s)/a_n) x_t y_s' computed lag by lag; rows of
// x/y are observations.
MatrixXd kernel_weighted_cross(const MatrixXd& x, const MatrixXd& y, const KernelSpec& kernel);

// Factorized HAC estimate from precomputed moment rows.
HacEstimate hac_from_rows(const MatrixXd& rows, const KernelSpec& kernel);

HacEstimate hac_covariance(const MomentModel& model, const ParamPoint& point, const KernelSpec& kernel);

// d^2 x d_gamma derivative of vec(omega) in gamma (columns are
// vec(d omega / d gamma_k), column-major vec).
MatrixXd hac_jacobian_gamma(const MomentModel& model, const ParamPoint& point, const KernelSpec& kernel);
// beta analogue, d^2 x d_beta
MatrixXd hac_jacobian_beta(const MomentModel& model, const ParamPoint& point, const KernelSpec& kernel);

}  // namespace subsetar
