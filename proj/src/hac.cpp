#include "subsetar/hac.hpp"

#include "subsetar/errors.hpp"

#include <cmath>
#include <numbers>

namespace subsetar {

std::string to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::Bartlett: return "bartlett";
    case KernelKind::Parzen: return "parzen";
    case KernelKind::QuadraticSpectral: return "qs";
    case KernelKind::TruncationZero: return "trunc0";
  }
  return "?";
}

double KernelSpec::weight(double x) const {
  const double ax = std::abs(x);
  switch (kind) {
    case KernelKind::Bartlett:
      return ax < 1.0 ? 1.0 - ax : 0.0;
    case KernelKind::Parzen:
      if (ax <= 0.5) return 1.0 - 6.0 * ax * ax + 6.0 * ax * ax * ax;
      if (ax <= 1.0) {
        const double u = 1.0 - ax;
        return 2.0 * u * u * u;
      }
      return 0.0;
    case KernelKind::QuadraticSpectral: {
      if (ax == 0.0) return 1.0;
      const double phi = 6.0 * std::numbers::pi * x / 5.0;
      return 25.0 / (12.0 * std::numbers::pi * std::numbers::pi * x * x) *
             (std::sin(phi) / phi - std::cos(phi));
    }
    case KernelKind::TruncationZero:
      return ax == 0.0 ? 1.0 : 0.0;
  }
  return 0.0;
}

double KernelSpec::resolved_bandwidth(long n) const {
  if (kind == KernelKind::TruncationZero) return 0.0;
  if (bandwidth > 0.0) return bandwidth;
  return std::max(1.0, std::floor(4.0 * std::pow(static_cast<double>(n) / 100.0, 2.0 / 9.0)));
}

double KernelSpec::lag_weight(long j, long n) const {
  if (kind == KernelKind::TruncationZero) return j == 0 ? 1.0 : 0.0;
  return weight(static_cast<double>(j) / resolved_bandwidth(n));
}

long KernelSpec::lag_cutoff(long n) const {
  switch (kind) {
    case KernelKind::TruncationZero:
      return 1;
    case KernelKind::Bartlett:
    case KernelKind::Parzen: {
      const long c = static_cast<long>(std::ceil(resolved_bandwidth(n)));
      return std::min(n, c);
    }
    case KernelKind::QuadraticSpectral:
      return n;
  }
  return n;
}

MatrixXd kernel_weighted_cross(const MatrixXd& x, const MatrixXd& y, const KernelSpec& kernel) {
  const long n = x.rows();
  if (y.rows() != n) throw InvalidMatrix("kernel_weighted_cross: row counts differ");
  MatrixXd acc = kernel.lag_weight(0, n) * (x.transpose() * y);
  const long cutoff = kernel.lag_cutoff(n);
  for (long j = 1; j < std::min(n, cutoff + 1); ++j) {
    const double w = kernel.lag_weight(j, n);
    if (w == 0.0) continue;
    // t - s = j and t - s = -j
    acc.noalias() += w * (x.bottomRows(n - j).transpose() * y.topRows(n - j));
    acc.noalias() += w * (x.topRows(n - j).transpose() * y.bottomRows(n - j));
  }
  return acc / static_cast<double>(n);
}

VectorXd HacEstimate::solve(const VectorXd& b) const {
  const VectorXd proj = eigenvectors.transpose() * b;
  return eigenvectors * (proj.array() / eigenvalues.array()).matrix();
}

MatrixXd HacEstimate::solve_matrix(const MatrixXd& b) const {
  const MatrixXd proj = eigenvectors.transpose() * b;
  return eigenvectors * (proj.array().colwise() / eigenvalues.array()).matrix();
}

MatrixXd HacEstimate::inverse() const {
  return eigenvectors * eigenvalues.cwiseInverse().asDiagonal() * eigenvectors.transpose();
}

MatrixXd HacEstimate::inverse_sqrt() const {
  return eigenvectors * eigenvalues.array().rsqrt().matrix().asDiagonal() * eigenvectors.transpose();
}

HacEstimate hac_from_rows(const MatrixXd& rows, const KernelSpec& kernel) {
  const long n = rows.rows();
  const long d = rows.cols();
  if (n < d)
    throw InsufficientSample("need n >= d for the weight matrix, got n = " + std::to_string(n) +
                             ", d = " + std::to_string(d));
  HacEstimate out;
  out.omega = kernel_weighted_cross(rows, rows, kernel);
  out.omega = 0.5 * (out.omega + out.omega.transpose());

  SpectralDecomp eig = sym_eig(out.omega);
  out.min_eigenvalue_raw = eig.eigenvalues(d - 1);
  const double lmax = eig.eigenvalues(0);
  if (out.min_eigenvalue_raw < 0.0 && out.min_eigenvalue_raw >= -1e-10 * std::max(lmax, 1e-300)) {
    eig.eigenvalues = eig.eigenvalues.cwiseMax(0.0);
    out.clipped = true;
  }
  const double lmin = eig.eigenvalues(d - 1);
  if (!(lmax > 0.0) || lmin * 1e12 <= lmax)
    throw SingularWeightMatrix("weight matrix numerically singular (eigenvalues " +
                               std::to_string(lmin) + " .. " + std::to_string(lmax) + ")");
  out.eigenvalues = std::move(eig.eigenvalues);
  out.eigenvectors = std::move(eig.eigenvectors);
  return out;
}

HacEstimate hac_covariance(const MomentModel& model, const ParamPoint& point, const KernelSpec& kernel) {
  MatrixXd rows;
  model.moment_rows(point.beta, point.gamma, rows);
  if (!rows.allFinite()) {
    for (long t = 0; t < rows.rows(); ++t)
      if (!rows.row(t).allFinite()) throw MomentEvaluationError("non-finite moment value", t);
  }
  return hac_from_rows(rows, kernel);
}

namespace {

MatrixXd hac_jacobian_impl(const MomentModel& model, const ParamPoint& point, const KernelSpec& kernel,
                           bool wrt_gamma) {
  const int d = model.d();
  const int p = wrt_gamma ? model.d_gamma() : model.d_beta();
  MatrixXd rows;
  model.moment_rows(point.beta, point.gamma, rows);

  MatrixXd out(d * d, p);
  MatrixXd jrows;
  for (int k = 0; k < p; ++k) {
    const MatrixXd* jk = wrt_gamma ? model.cached_jac_gamma_rows(k) : model.cached_jac_beta_rows(k);
    if (jk == nullptr) {
      if (wrt_gamma) model.jac_gamma_rows(point.beta, point.gamma, k, jrows);
      else model.jac_beta_rows(point.beta, point.gamma, k, jrows);
      jk = &jrows;
    }
    const MatrixXd half = kernel_weighted_cross(*jk, rows, kernel);
    const MatrixXd deriv = half + half.transpose();
    out.col(k) = Eigen::Map<const VectorXd>(deriv.data(), d * d);
  }
  return out;
}

}  // namespace

MatrixXd hac_jacobian_gamma(const MomentModel& model, const ParamPoint& point, const KernelSpec& kernel) {
  return hac_jacobian_impl(model, point, kernel, true);
}

MatrixXd hac_jacobian_beta(const MomentModel& model, const ParamPoint& point, const KernelSpec& kernel) {
  return hac_jacobian_impl(model, point, kernel, false);
}

}  // namespace subsetar
