#include <doctest.h>

#include "subsetar/errors.hpp"
#include "subsetar/numerics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

using namespace subsetar;

namespace {

// Independent chi-square CDF: composite Simpson on the substituted density
// h(u) = 2u * pdf(u^2), which is smooth at u = 0 for every df >= 1.
double chi2_cdf_quadrature(double x, int df) {
  if (x <= 0.0) return 0.0;
  const double a = 0.5 * df;
  const double lognorm = -a * std::numbers::ln2 - std::lgamma(a);
  auto h = [&](double u) {
    if (u == 0.0 && df == 1) return 2.0 * std::exp(lognorm);
    if (u <= 0.0) return 0.0;
    const double logp = (a - 1.0) * 2.0 * std::log(u) - 0.5 * u * u + lognorm;
    return 2.0 * u * std::exp(logp);
  };
  const double upper = std::sqrt(x);
  const int n = 40000;  // even
  const double step = upper / n;
  double sum = h(0.0) + h(upper);
  for (int i = 1; i < n; ++i) sum += h(i * step) * (i % 2 ? 4.0 : 2.0);
  return sum * step / 3.0;
}

double chi2_quantile_bisect(int df, double p) {
  double lo = 0.0, hi = 1.0;
  while (chi2_cdf_quadrature(hi, df) < p) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (chi2_cdf_quadrature(mid, df) < p) lo = mid;
    else hi = mid;
    if (hi - lo < 1e-11 * hi) break;
  }
  return 0.5 * (lo + hi);
}

MatrixXd random_spd(int n, RngStream& rng, double ridge) {
  MatrixXd b(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) b(i, j) = rng.normal();
  return b * b.transpose() + ridge * MatrixXd::Identity(n, n);
}

}  // namespace

TEST_CASE("sym_eig identity and diagonal") {
  SpectralDecomp eig = sym_eig(MatrixXd::Identity(3, 3));
  for (int i = 0; i < 3; ++i) CHECK(eig.eigenvalues(i) == doctest::Approx(1.0));

  MatrixXd d = MatrixXd::Zero(2, 2);
  d(0, 0) = 1.0;
  d(1, 1) = 4.0;
  eig = sym_eig(d);
  CHECK(eig.eigenvalues(0) == doctest::Approx(4.0));
  CHECK(eig.eigenvalues(1) == doctest::Approx(1.0));
  CHECK(std::abs(eig.eigenvectors(1, 0)) == doctest::Approx(1.0));
  CHECK(std::abs(eig.eigenvectors(0, 1)) == doctest::Approx(1.0));
}

TEST_CASE("sym_eig reconstruction on random SPD matrices up to dim 50") {
  RngStream rng(2024, 0);
  for (int n : {2, 5, 13, 50}) {
    MatrixXd m = random_spd(n, rng, 0.1);
    SpectralDecomp eig = sym_eig(m);
    MatrixXd rec = eig.eigenvectors * eig.eigenvalues.asDiagonal() * eig.eigenvectors.transpose();
    CHECK((rec - m).norm() <= 1e-10 * m.norm());
    MatrixXd vtv = eig.eigenvectors.transpose() * eig.eigenvectors;
    CHECK((vtv - MatrixXd::Identity(n, n)).norm() <= 1e-10);
    for (int i = 0; i + 1 < n; ++i) CHECK(eig.eigenvalues(i) >= eig.eigenvalues(i + 1));
  }
}

TEST_CASE("sym_eig rejects bad input") {
  MatrixXd m(2, 2);
  m << 1.0, 2.0, 3.0, 1.0;
  CHECK_THROWS_AS(sym_eig(m), InvalidMatrix);
  m << 1.0, 0.0, 0.0, std::nan("");
  CHECK_THROWS_AS(sym_eig(m), InvalidMatrix);
}

TEST_CASE("inv_sqrt on diagonal and random SPD") {
  MatrixXd d = MatrixXd::Zero(2, 2);
  d(0, 0) = 4.0;
  d(1, 1) = 9.0;
  MatrixXd s = inv_sqrt(d);
  CHECK(s(0, 0) == doctest::Approx(0.5));
  CHECK(s(1, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(inv_sqrt(MatrixXd::Identity(2, 2)).isApprox(MatrixXd::Identity(2, 2), 1e-12));

  RngStream rng(7, 1);
  MatrixXd m = random_spd(4, rng, 0.5);
  s = inv_sqrt(m);
  CHECK((s * m * s - MatrixXd::Identity(4, 4)).norm() <= 1e-8);
  // shares eigenvectors with m
  CHECK((s * m - m * s).norm() <= 1e-8 * m.norm());
}

TEST_CASE("inv_sqrt near-singular input throws") {
  MatrixXd m = MatrixXd::Zero(2, 2);
  m(0, 0) = 1.0;
  m(1, 1) = 1e-15;
  CHECK_THROWS_AS(inv_sqrt(m), SingularWeightMatrix);
}

TEST_CASE("tsvd_pinv truncation and Moore-Penrose agreement") {
  MatrixXd d = MatrixXd::Zero(2, 2);
  d(0, 0) = 2.0;
  d(1, 1) = 0.5;
  MatrixXd p = tsvd_pinv(d, 1.0);
  CHECK(p(0, 0) == doctest::Approx(0.5));
  CHECK(p(1, 1) == doctest::Approx(0.0));

  CHECK(tsvd_pinv(MatrixXd::Zero(3, 3), 0.5).norm() == doctest::Approx(0.0));
  CHECK_THROWS_AS(tsvd_pinv(d, 0.0), InvalidThreshold);
  CHECK_THROWS_AS(tsvd_pinv(d, -1.0), InvalidThreshold);

  // rank-2 PSD of dim 4; oracle via Eigen's independent eigensolver
  RngStream rng(11, 3);
  MatrixXd b(4, 2);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) b(i, j) = rng.normal();
  MatrixXd m = b * b.transpose();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
  double smallest_pos = 1e300;
  MatrixXd oracle = MatrixXd::Zero(4, 4);
  for (int i = 0; i < 4; ++i) {
    const double lam = es.eigenvalues()(i);
    if (lam > 1e-10) {
      smallest_pos = std::min(smallest_pos, lam);
      oracle += es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose() / lam;
    }
  }
  MatrixXd got = tsvd_pinv(m, 0.5 * smallest_pos);
  CHECK((got - oracle).norm() <= 1e-8 * oracle.norm());
  // operator norm bound 1/eps
  CHECK(sym_eig(got).eigenvalues.cwiseAbs().maxCoeff() <= 1.0 / (0.5 * smallest_pos) + 1e-12);
}

TEST_CASE("tsvd_pinv with vanishing eps equals the plain inverse") {
  RngStream rng(5, 9);
  MatrixXd m = random_spd(3, rng, 1.0);
  MatrixXd inv = m.inverse();
  CHECK((tsvd_pinv(m, 1e-14) - inv).norm() <= 1e-8 * inv.norm());
}

TEST_CASE("chi2 quantile matches quadrature oracle") {
  // Frozen from chi2_quantile_bisect: df=1/p=0.95 -> 3.8414588,
  // df=5/p=0.95 -> 11.0704977.
  CHECK(chi2_quantile(1, 0.95) == doctest::Approx(3.8414588).epsilon(1e-6));
  CHECK(chi2_quantile(5, 0.95) == doctest::Approx(11.0704977).epsilon(1e-6));
  for (int df : {1, 2, 5, 10}) {
    for (double p : {0.05, 0.5, 0.9, 0.99}) {
      const double q = chi2_quantile(df, p);
      CHECK(q == doctest::Approx(chi2_quantile_bisect(df, p)).epsilon(1e-7));
      CHECK(chi2_cdf(q, df) == doctest::Approx(p).epsilon(1e-10));
    }
  }
}

TEST_CASE("chi2 quantile edge behaviour") {
  CHECK(chi2_quantile(3, 1e-12) < 1e-3);
  CHECK_THROWS_AS(chi2_quantile(3, 0.0), InvalidProbability);
  CHECK_THROWS_AS(chi2_quantile(3, 1.0), InvalidProbability);
  // monotone in p and df
  CHECK(chi2_quantile(3, 0.8) < chi2_quantile(3, 0.9));
  CHECK(chi2_quantile(3, 0.9) < chi2_quantile(4, 0.9));
  // median bracketing for df >= 2
  for (int df : {2, 3, 10, 100, 1000}) {
    const double med = chi2_quantile(df, 0.5);
    CHECK(med > df - 1.0);
    CHECK(med < static_cast<double>(df));
  }
}

TEST_CASE("normal quantile sanity") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(normal_quantile(0.025) == doctest::Approx(-1.959963984540054).epsilon(1e-12));
}

TEST_CASE("rng streams are reproducible and disjoint") {
  RngStream a(42, 7);
  RngStream b(42, 7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream c(42, 8);
  RngStream d(43, 7);
  bool differs = false;
  RngStream a2(42, 7);
  for (int i = 0; i < 10; ++i) differs |= (a2.next_u64() != c.next_u64()) || (a2.next_u64() != d.next_u64());
  CHECK(differs);

  CHECK(normal_draw(RngStream(1, 1), 0).empty());
  auto x = normal_draw(RngStream(1, 1), 5);
  auto y = normal_draw(RngStream(1, 1), 5);
  CHECK(x == y);
}

TEST_CASE("rng normal moments over a million draws") {
  RngStream rng(20240801, 0);
  const long n = 1000000;
  double sum = 0.0, sumsq = 0.0;
  for (long i = 0; i < n; ++i) {
    const double v = rng.normal();
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(var > 0.99);
  CHECK(var < 1.01);
}
