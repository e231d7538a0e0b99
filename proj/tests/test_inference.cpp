#include <doctest.h>

#include "subsetar/errors.hpp"
#include "subsetar/inference.hpp"
#include "subsetar/moments.hpp"
#include "subsetar/numerics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

using namespace subsetar;

namespace {

std::vector<std::string> cols(const std::string& prefix, int k) {
  std::vector<std::string> out;
  for (int j = 0; j < k; ++j) out.push_back(prefix + std::to_string(j));
  return out;
}

Dataset strong_iv_dataset(long n, RngStream rng, double beta, double gamma) {
  Dataset data;
  Eigen::MatrixXd z(n, 3);
  Eigen::VectorXd x(n), w(n), y(n);
  for (long t = 0; t < n; ++t) {
    for (int j = 0; j < 3; ++j) z(t, j) = rng.normal();
    const double vx = rng.normal();
    const double vw = rng.normal();
    const double e = 0.4 * vx + rng.normal();
    x(t) = z(t, 0) + 0.5 * z(t, 1) + vx;
    w(t) = 0.8 * z(t, 2) + vw;
    y(t) = beta * x(t) + gamma * w(t) + e;
  }
  data.add("y", y);
  data.add("x", x);
  data.add("w0", w);
  for (int j = 0; j < 3; ++j) data.add("z" + std::to_string(j), z.col(j));
  return data;
}

Dataset ar_series_dataset(long len, RngStream rng) {
  Eigen::VectorXd pi(len), x(len);
  double x1 = 0.0, x2 = 0.0;
  for (long t = 0; t < len; ++t) {
    const double nu = rng.normal();
    const double xt = 0.9 * x1 - 0.2 * x2 + nu;
    pi(t) = 0.4 * x1 + 0.5 * rng.normal() + 0.5 * nu;
    x(t) = xt;
    x2 = x1;
    x1 = xt;
  }
  Dataset data;
  data.add("pi", pi);
  data.add("x", x);
  return data;
}

const KernelSpec kTrunc0{KernelKind::TruncationZero, 0.0};

}  // namespace

TEST_CASE("ar_test degrees of freedom and decision wiring") {
  Dataset ts = ar_series_dataset(120, RngStream(51, 0));
  auto lags3 = make_nkpc_model(ts, "pi", "x", InstrumentSet::Lags3);
  auto xlags = make_nkpc_model(ts, "pi", "x", InstrumentSet::XLags);

  TestResult a = ar_test(*lags3, VectorXd::Constant(1, 0.5), kTrunc0, 0.05);
  CHECK(a.df == 5);
  CHECK(a.crit == doctest::Approx(chi2_quantile(5, 0.95)));
  CHECK(a.reject == (a.stat > a.crit));
  CHECK(a.pvalue == doctest::Approx(1.0 - chi2_cdf(a.stat, 5)));

  TestResult b = ar_test(*xlags, VectorXd::Constant(1, 0.5), kTrunc0, 0.05);
  CHECK(b.df == 1);
}

TEST_CASE("exact fit accepts with p-value one") {
  const long n = 40;
  RngStream rng(52, 1);
  Eigen::MatrixXd z(n, 3);
  Eigen::VectorXd w(n), x(n), e(n);
  for (long t = 0; t < n; ++t) {
    for (int j = 0; j < 3; ++j) z(t, j) = rng.normal();
    w(t) = 0.8 * z(t, 0) + rng.normal();
    x(t) = 0.5 * z(t, 1) + rng.normal();
    e(t) = rng.normal();
  }
  e -= z * (z.transpose() * z).ldlt().solve(z.transpose() * e);
  Eigen::VectorXd y = x + 0.3 * w + e;
  Dataset data;
  data.add("y", y);
  data.add("x", x);
  data.add("w0", w);
  for (int j = 0; j < 3; ++j) data.add("z" + std::to_string(j), z.col(j));
  auto model = make_linear_iv_model(data, "y", "x", cols("w", 1), cols("z", 3));

  TestResult r = ar_test(*model, VectorXd::Constant(1, 1.0), kTrunc0, 0.05);
  CHECK(r.stat <= 1e-8);
  CHECK(r.pvalue == doctest::Approx(1.0));
  CHECK_FALSE(r.reject);
}

TEST_CASE("just-identified design: KLM equals AR draw by draw") {
  for (int rep = 0; rep < 8; ++rep) {
    Dataset ts = ar_series_dataset(140, RngStream(53, static_cast<std::uint64_t>(rep)));
    auto model = make_nkpc_model(ts, "pi", "x", InstrumentSet::XLags);
    const VectorXd beta0 = VectorXd::Constant(1, 0.5);
    TestResult a = ar_test(*model, beta0, kTrunc0, 0.05);
    TestResult k = klm_test(*model, beta0, kTrunc0, 0.05);
    CHECK(std::abs(a.stat - k.stat) < 1e-6 * std::max(1.0, a.stat));
    CHECK(a.reject == k.reject);
  }
}

TEST_CASE("statistics invariant to instrument rescaling") {
  Dataset ts = ar_series_dataset(130, RngStream(54, 2));
  Dataset scaled;
  scaled.add("pi", ts.col("pi"));
  scaled.add("x", ts.col("x"));
  auto model = make_nkpc_model(ts, "pi", "x", InstrumentSet::Lags3);

  // rescale instruments via the pi/x series trick is not possible; rescale
  // by wrapping the model rows instead
  MatrixXd g0;
  model->moment_rows(VectorXd::Zero(1), VectorXd::Zero(1), g0);
  std::vector<MatrixXd> jb(1), jg(1);
  MatrixXd tmp;
  model->jac_beta_rows(VectorXd::Zero(1), VectorXd::Zero(1), 0, tmp);
  jb[0] = 7.5 * tmp;
  model->jac_gamma_rows(VectorXd::Zero(1), VectorXd::Zero(1), 0, tmp);
  jg[0] = 7.5 * tmp;
  LinearMomentModel rescaled(7.5 * g0, jb, jg);

  const VectorXd beta0 = VectorXd::Constant(1, 0.5);
  TestResult a1 = ar_test(*model, beta0, kTrunc0, 0.05);
  TestResult a2 = ar_test(rescaled, beta0, kTrunc0, 0.05);
  CHECK(std::abs(a1.stat - a2.stat) <= 1e-9 * std::max(1.0, a1.stat));
  TestResult k1 = klm_test(*model, beta0, kTrunc0, 0.05);
  TestResult k2 = klm_test(rescaled, beta0, kTrunc0, 0.05);
  CHECK(std::abs(k1.stat - k2.stat) <= 1e-9 * std::max(1.0, k1.stat));
}

TEST_CASE("two-step GMM t test on a strong design") {
  Dataset data = strong_iv_dataset(5000, RngStream(55, 3), 1.0, 0.5);
  auto model = make_linear_iv_model(data, "y", "x", cols("w", 1), cols("z", 3));
  TestResult t = wald_t_test(*model, 0, 1.0, kTrunc0, 0.05);
  CHECK(t.crit == doctest::Approx(normal_quantile(0.975)));
  CHECK(t.stat >= 0.0);
  CHECK_FALSE(t.stat > 5.0);  // truth at null, gross rejection would be a bug

  // testing a wrong null must reject decisively at n = 5000
  TestResult t_wrong = wald_t_test(*model, 0, 0.0, kTrunc0, 0.05);
  CHECK(t_wrong.reject);
}

TEST_CASE("t test size in a small null simulation") {
  int rejections = 0;
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) {
    Dataset data = strong_iv_dataset(400, RngStream(56, static_cast<std::uint64_t>(rep)), 1.0, 0.5);
    auto model = make_linear_iv_model(data, "y", "x", cols("w", 1), cols("z", 3));
    rejections += wald_t_test(*model, 0, 1.0, kTrunc0, 0.05).reject ? 1 : 0;
  }
  const double rate = static_cast<double>(rejections) / reps;
  CHECK(rate > 0.005);
  CHECK(rate < 0.14);
}

TEST_CASE("confidence set inversion: duality, hull, convexity") {
  Dataset data = strong_iv_dataset(500, RngStream(57, 4), 1.0, 0.5);
  auto model = make_linear_iv_model(data, "y", "x", cols("w", 1), cols("z", 3));
  VectorXd grid(41);
  for (int i = 0; i < 41; ++i) grid(i) = 0.0 + 2.0 * i / 40.0;

  ConfidenceSet ci = invert_ar_ci(*model, kTrunc0, 0.05, grid);
  CHECK_FALSE(ci.empty);
  CHECK(ci.lower <= 1.0);
  CHECK(ci.upper >= 1.0);

  // duality at every grid point
  for (int i = 0; i < 41; ++i) {
    const TestResult r = ar_test(*model, VectorXd::Constant(1, grid(i)), kTrunc0, 0.05);
    CHECK(ci.accepted[static_cast<size_t>(i)] == !r.reject);
  }

  // endpoints live inside the bracketing grid cells
  long first = std::distance(ci.accepted.begin(),
                             std::find(ci.accepted.begin(), ci.accepted.end(), true));
  CHECK(ci.lower <= ci.grid(first));
  if (first > 0) CHECK(ci.lower >= ci.grid(first - 1));
}

TEST_CASE("confidence set edge cases: empty set and gap hull") {
  // all-rejected: impossible moment system -> statistic diverges; emulate
  // with a grid far away from the truth of a strong design
  Dataset data = strong_iv_dataset(600, RngStream(58, 5), 1.0, 0.5);
  auto model = make_linear_iv_model(data, "y", "x", cols("w", 1), cols("z", 3));
  VectorXd far(3);
  far << 30.0, 35.0, 40.0;
  ConfidenceSet ci = invert_ar_ci(*model, kTrunc0, 0.05, far);
  CHECK(ci.empty);

  // synthetic mask check via a grid straddling the set boundary is covered
  // above; convex flag on a gap requires a weak design, covered in the
  // acceptance suite where one arises organically.
}

TEST_CASE("projection interval for a two-dimensional beta") {
  // local projection with H = 1 gives d_beta = 2; exact fit at truth
  const long n = 60;
  RngStream rng(59, 6);
  Eigen::VectorXd x(n), w(n), z0(n), z1(n);
  for (long t = 0; t < n; ++t) {
    z0(t) = rng.normal();
    z1(t) = rng.normal();
    x(t) = 0.9 * z0(t) + 0.4 * z1(t) + 0.3 * rng.normal();
    w(t) = rng.normal();
  }
  Eigen::VectorXd y = 0.7 * x + 0.2 * w;  // exact linear outcome
  Dataset data;
  data.add("y", y);
  data.add("x", x);
  data.add("w0", w);
  data.add("z0", z0);
  data.add("z1", z1);
  auto lp = make_local_projection_model(data, "y", "x", cols("w", 1), cols("z", 2), 1);
  CHECK(lp->d() == 4);
  CHECK(lp->d_beta() == 2);
  CHECK(lp->d_gamma() == 2);

  ProjectionSearchOpts search;
  search.optim.box_lo = -10.0;
  search.optim.box_hi = 10.0;
  ProjectionInterval proj = project_ci(*lp, kTrunc0, 0.05, 0, search);
  CHECK(proj.df == 4 - 2 - 2 + 1);
  CHECK_FALSE(proj.empty);
  CHECK(proj.lower <= 0.7);
  CHECK(proj.upper >= 0.7);

  // grid-scan oracle: beta_0 values whose inner minimum passes the
  // threshold must lie inside the projection interval
  for (double b1 : {0.5, 0.7, 0.9}) {
    ParamPoint fixed{VectorXd::Zero(2), VectorXd::Zero(2)};
    fixed.beta(0) = b1;
    std::vector<bool> fb{false, true};
    std::vector<bool> fg{true, true};
    const double q = minimize_cue(*lp, kTrunc0, fixed, fb, fg, search.optim).q;
    if (q <= proj.crit) {
      CHECK(proj.lower <= b1 + search.tol);
      CHECK(proj.upper >= b1 - search.tol);
    }
  }
}

TEST_CASE("p-values are roughly uniform under a strong null") {
  const int reps = 200;
  std::vector<double> pvals;
  pvals.reserve(reps);
  for (int rep = 0; rep < reps; ++rep) {
    Dataset data = strong_iv_dataset(200, RngStream(60, static_cast<std::uint64_t>(rep)), 1.0, 0.5);
    auto model = make_linear_iv_model(data, "y", "x", cols("w", 1), cols("z", 3));
    pvals.push_back(ar_test(*model, VectorXd::Constant(1, 1.0), kTrunc0, 0.05).pvalue);
  }
  std::sort(pvals.begin(), pvals.end());
  double ks = 0.0;
  for (int i = 0; i < reps; ++i) {
    const double f = pvals[static_cast<size_t>(i)];
    ks = std::max(ks, std::abs((i + 1.0) / reps - f));
    ks = std::max(ks, std::abs(f - static_cast<double>(i) / reps));
  }
  CHECK(ks < 1.358 / std::sqrt(static_cast<double>(reps)));
}
