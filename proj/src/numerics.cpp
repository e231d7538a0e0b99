#include "subsetar/numerics.hpp"

#include "subsetar/errors.hpp"

#include <cmath>
#include <algorithm>
#include <limits>
#include <numbers>

namespace subsetar {

namespace {

void check_symmetric(const MatrixXd& m) {
  if (m.rows() != m.cols() || m.rows() < 1) throw InvalidMatrix("matrix must be square and non-empty");
  if (!m.allFinite()) throw InvalidMatrix("matrix has non-finite entries");
  const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = i + 1; j < m.cols(); ++j)
      if (std::abs(m(i, j) - m(j, i)) > 1e-12 * scale)
        throw InvalidMatrix("matrix is not symmetric");
}

}  // namespace

SpectralDecomp sym_eig(const MatrixXd& m) {
  check_symmetric(m);
  const Eigen::Index n = m.rows();
  MatrixXd a = 0.5 * (m + m.transpose());
  MatrixXd v = MatrixXd::Identity(n, n);

  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(2.0 * off) <= 1e-15 * std::max(a.norm(), 1e-300)) break;

    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        const double small = 1e-300 + 1e-18 * (std::abs(a(p, p)) + std::abs(a(q, q)));
        if (std::abs(apq) <= small) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t;
        if (std::abs(theta) > 1e154) {
          t = 0.5 / theta;
        } else {
          t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
          if (theta < 0.0) t = -t;
        }
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double tau = s / (1.0 + c);

        a(p, p) -= t * apq;
        a(q, q) += t * apq;
        a(p, q) = a(q, p) = 0.0;
        for (Eigen::Index r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = a(r, p);
          const double arq = a(r, q);
          a(r, p) = arp - s * (arq + tau * arp);
          a(r, q) = arq + s * (arp - tau * arq);
          a(p, r) = a(r, p);
          a(q, r) = a(r, q);
        }
        for (Eigen::Index r = 0; r < n; ++r) {
          const double vrp = v(r, p);
          const double vrq = v(r, q);
          v(r, p) = vrp - s * (vrq + tau * vrp);
          v(r, q) = vrq + s * (vrp - tau * vrq);
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });

  SpectralDecomp out;
  out.eigenvalues.resize(n);
  out.eigenvectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<size_t>(k)];
    out.eigenvalues(k) = a(src, src);
    out.eigenvectors.col(k) = v.col(src);
    // Deterministic sign: largest-magnitude component positive.
    Eigen::Index imax = 0;
    out.eigenvectors.col(k).cwiseAbs().maxCoeff(&imax);
    if (out.eigenvectors(imax, k) < 0.0) out.eigenvectors.col(k) = -out.eigenvectors.col(k);
  }
  return out;
}

MatrixXd inv_sqrt(const MatrixXd& m) {
  const SpectralDecomp eig = sym_eig(m);
  const Eigen::Index n = m.rows();
  const double lmax = eig.eigenvalues(0);
  const double lmin = eig.eigenvalues(n - 1);
  if (!(lmax > 0.0) || lmin <= static_cast<double>(n) * 1e-12 * lmax)
    throw SingularWeightMatrix("matrix is numerically singular (smallest eigenvalue " +
                               std::to_string(lmin) + ", largest " + std::to_string(lmax) + ")");
  VectorXd d = eig.eigenvalues.array().rsqrt();
  return eig.eigenvectors * d.asDiagonal() * eig.eigenvectors.transpose();
}

MatrixXd tsvd_pinv(const MatrixXd& m, double eps) {
  if (!(eps > 0.0)) throw InvalidThreshold("truncation threshold must be positive");
  const SpectralDecomp eig = sym_eig(m);
  const double lmax = std::max(eig.eigenvalues(0), 0.0);
  if (eig.eigenvalues(m.rows() - 1) < -1e-10 * std::max(lmax, 1.0))
    throw InvalidMatrix("matrix is not positive semidefinite");
  VectorXd d = VectorXd::Zero(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    if (eig.eigenvalues(i) > eps) d(i) = 1.0 / eig.eigenvalues(i);
  return eig.eigenvectors * d.asDiagonal() * eig.eigenvectors.transpose();
}

MatrixXd projection_onto(const MatrixXd& x, bool* rank_deficient, int* rank) {
  const MatrixXd gram = x.transpose() * x;
  const double top = gram.size() > 0 ? gram.cwiseAbs().maxCoeff() : 0.0;
  if (rank != nullptr) *rank = 0;
  if (!(top > 0.0)) {
    if (rank_deficient != nullptr) *rank_deficient = true;
    return MatrixXd::Zero(x.rows(), x.rows());
  }
  const double eps = 1e-12 * top * static_cast<double>(gram.rows());
  const SpectralDecomp eig = sym_eig(gram);
  int kept = 0;
  VectorXd inv = VectorXd::Zero(gram.rows());
  for (Eigen::Index i = 0; i < gram.rows(); ++i) {
    if (eig.eigenvalues(i) > eps) {
      inv(i) = 1.0 / eig.eigenvalues(i);
      ++kept;
    }
  }
  if (kept < gram.rows() && rank_deficient != nullptr) *rank_deficient = true;
  if (rank != nullptr) *rank = kept;
  const MatrixXd pinv = eig.eigenvectors * inv.asDiagonal() * eig.eigenvectors.transpose();
  return x * pinv * x.transpose();
}

namespace {

// Regularized lower incomplete gamma by the classic series / continued
// fraction split at x = a + 1.
double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int i = 0; i < 1000; ++i) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 1000; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace

double gamma_p(double a, double x) {
  if (x <= 0.0) return 0.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return 1.0 - gamma_q_contfrac(a, x);
}

double chi2_cdf(double x, int df) {
  if (df < 1) throw Error("degrees of freedom must be >= 1");
  if (x <= 0.0) return 0.0;
  return gamma_p(0.5 * df, 0.5 * x);
}

namespace {

double chi2_logpdf(double x, int df) {
  const double a = 0.5 * df;
  return (a - 1.0) * std::log(x) - 0.5 * x - a * std::numbers::ln2 - std::lgamma(a);
}

}  // namespace

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidProbability("probability must be in (0,1)");
  // Acklam's rational start, then Newton polish on erfc.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01,  -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  for (int it = 0; it < 2; ++it) {
    const double cdf = 0.5 * std::erfc(-x * std::numbers::sqrt2 * 0.5);
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    if (pdf <= 0.0) break;
    x -= (cdf - p) / pdf;
  }
  return x;
}

double chi2_quantile(int df, double p) {
  if (df < 1 || df > 1000) throw Error("degrees of freedom must be in [1, 1000]");
  if (!(p > 0.0 && p < 1.0)) throw InvalidProbability("probability must be in (0,1)");

  // Wilson-Hilferty start.
  const double z = normal_quantile(p);
  const double f = 2.0 / (9.0 * df);
  double x = df * std::pow(1.0 - f + z * std::sqrt(f), 3);
  if (!(x > 0.0)) x = 0.5 * df;

  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 200; ++it) {
    const double cdf = chi2_cdf(x, df);
    const double err = cdf - p;
    if (err > 0.0) hi = std::min(hi, x);
    else lo = std::max(lo, x);
    if (std::abs(err) < 1e-14) break;
    const double pdf = std::exp(chi2_logpdf(x, df));
    double next = x;
    if (pdf > 0.0) next = x - err / pdf;
    if (!(next > lo && next < hi)) {
      next = std::isfinite(hi) ? 0.5 * (lo + hi) : std::max(2.0 * x, 1.0);
    }
    if (std::abs(next - x) < 1e-15 * std::max(x, 1.0)) {
      x = next;
      break;
    }
    x = next;
  }
  return x;
}

namespace {

std::uint64_t avalanche(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
  state_ = avalanche(seed + 0x9E3779B97F4A7C15ULL);
  state_ = avalanche(state_ ^ (stream * 0xBF58476D1CE4E5B9ULL + 0x94D049BB133111EBULL));
}

std::uint64_t RngStream::next_u64() {
  state_ += 0x9E3779B97F4A7C15ULL;
  return avalanche(state_);
}

double RngStream::uniform() {
  return (static_cast<double>(next_u64() >> 12) + 0.5) * (1.0 / 4503599627370496.0);
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(angle);
  has_spare_ = true;
  return r * std::cos(angle);
}

std::vector<double> normal_draw(RngStream stream, long count) {
  if (count < 0) throw Error("draw count must be non-negative");
  std::vector<double> out(static_cast<size_t>(count));
  for (auto& v : out) v = stream.normal();
  return out;
}

}  // namespace subsetar
