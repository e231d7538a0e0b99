#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace subsetar {

// Symmetric matrices are passed around as plain Eigen matrices; the
// operations below validate symmetry/finiteness on entry.
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SpectralDecomp {
  VectorXd eigenvalues;   // descending
  MatrixXd eigenvectors;  // orthonormal columns, paired with eigenvalues
};

// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
// Deterministic: fixed sweep order, eigenvalues sorted descending, the
// largest-magnitude entry of each eigenvector made positive.
SpectralDecomp sym_eig(const MatrixXd& m);

// Symmetric inverse square root. Requires the smallest eigenvalue to exceed
// dim * 1e-12 * largest; throws SingularWeightMatrix otherwise.
MatrixXd inv_sqrt(const MatrixXd& m);

// Truncated-SVD pseudoinverse of a symmetric PSD matrix: eigenvalues <= eps
// are zeroed before inversion, so the operator norm of the result is
// bounded by 1/eps.
MatrixXd tsvd_pinv(const MatrixXd& m, double eps);

// Orthogonal projection onto the column space of x, built as
// x (x'x)^+ x' with a machine-relative truncation. Optionally reports the
// numerical rank and whether it fell short of the column count.
MatrixXd projection_onto(const MatrixXd& x, bool* rank_deficient = nullptr, int* rank = nullptr);

// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);

double chi2_cdf(double x, int df);

// 1-alpha style quantile: chi2_cdf(result, df) == p to ~1e-10.
double chi2_quantile(int df, double p);

// Standard normal quantile of p in (0,1), via the chi-square machinery.
double normal_quantile(double p);

// Counter-derived splittable RNG: the draw sequence is a pure function of
// (seed, stream), so replication r of a run with seed s is addressable
// without generating earlier replications. Value type; copy freely, never
// share one instance across replications.
class RngStream {
public:
  RngStream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1).
  double uniform();
  // Standard normal via Box-Muller on the uniform stream.
  double normal();

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::vector<double> normal_draw(RngStream stream, long count);

}  // namespace subsetar
