#include <doctest.h>

#include "subsetar/errors.hpp"
#include "subsetar/moments.hpp"
#include "subsetar/numerics.hpp"

#include <cmath>

using namespace subsetar;

namespace {

Dataset random_iv_dataset(long n, int dw, int dz, RngStream rng, double beta, const VectorXd& gamma) {
  Dataset data;
  Eigen::MatrixXd z(n, dz), w(n, dw);
  Eigen::VectorXd x(n), y(n);
  for (long t = 0; t < n; ++t) {
    for (int j = 0; j < dz; ++j) z(t, j) = rng.normal();
    for (int j = 0; j < dw; ++j) w(t, j) = rng.normal();
    x(t) = z.row(t).sum() * 0.4 + rng.normal();
    y(t) = beta * x(t) + w.row(t) * gamma + rng.normal();
  }
  data.add("y", y);
  data.add("x", x);
  for (int j = 0; j < dw; ++j) data.add("w" + std::to_string(j), w.col(j));
  for (int j = 0; j < dz; ++j) data.add("z" + std::to_string(j), z.col(j));
  return data;
}

std::vector<std::string> cols(const std::string& prefix, int k) {
  std::vector<std::string> out;
  for (int j = 0; j < k; ++j) out.push_back(prefix + std::to_string(j));
  return out;
}

// central finite differences of g_t in one gamma coordinate
VectorXd fd_gamma(const MomentModel& m, long t, const VectorXd& beta, const VectorXd& gamma, int k,
                  double h) {
  VectorXd gp = gamma, gm = gamma;
  gp(k) += h;
  gm(k) -= h;
  return (m.g(t, beta, gp) - m.g(t, beta, gm)) / (2.0 * h);
}

VectorXd fd_beta(const MomentModel& m, long t, const VectorXd& beta, const VectorXd& gamma, int k,
                 double h) {
  VectorXd bp = beta, bm = beta;
  bp(k) += h;
  bm(k) -= h;
  return (m.g(t, bp, gamma) - m.g(t, bm, gamma)) / (2.0 * h);
}

}  // namespace

TEST_CASE("average_moments single observation and hand-summed fixture") {
  VectorXd gamma_true(1);
  gamma_true << 0.3;
  Dataset data = random_iv_dataset(1, 1, 2, RngStream(3, 0), 1.0, gamma_true);
  auto model = make_linear_iv_model(data, "y", "x", cols("w", 1), cols("z", 2));
  ParamPoint pt{VectorXd::Constant(1, 0.5), VectorXd::Constant(1, -0.2)};
  CHECK((average_moments(*model, pt) - model->g(0, pt.beta, pt.gamma)).norm() == doctest::Approx(0.0));

  data = random_iv_dataset(5, 1, 2, RngStream(4, 0), 1.0, gamma_true);
  model = make_linear_iv_model(data, "y", "x", cols("w", 1), cols("z", 2));
  VectorXd hand = VectorXd::Zero(2);
  for (long t = 0; t < 5; ++t) hand += model->g(t, pt.beta, pt.gamma);
  hand /= 5.0;
  CHECK((average_moments(*model, pt) - hand).norm() <= 1e-12 * hand.norm());
}

TEST_CASE("linear IV adapter shapes and exact fit") {
  VectorXd gamma_true(2);
  gamma_true << 0.3, -0.7;
  Dataset data = random_iv_dataset(40, 2, 4, RngStream(5, 1), 1.5, gamma_true);
  // overwrite y with an exact fit
  Eigen::VectorXd y_exact = 1.5 * data.col("x") + 0.3 * data.col("w0") - 0.7 * data.col("w1");
  Dataset exact;
  exact.add("y", y_exact);
  exact.add("x", data.col("x"));
  exact.add("w0", data.col("w0"));
  exact.add("w1", data.col("w1"));
  for (int j = 0; j < 4; ++j) exact.add("z" + std::to_string(j), data.col("z" + std::to_string(j)));

  auto model = make_linear_iv_model(exact, "y", "x", cols("w", 2), cols("z", 4));
  CHECK(model->d() == 4);
  CHECK(model->d_beta() == 1);
  CHECK(model->d_gamma() == 2);
  CHECK(model->linear_in_gamma());

  ParamPoint truth{VectorXd::Constant(1, 1.5), gamma_true};
  CHECK(average_moments(*model, truth).norm() <= 1e-12);

  // beta = gamma = 0 gives g_t = y_t z_t
  ParamPoint zero{VectorXd::Zero(1), VectorXd::Zero(2)};
  VectorXd g0 = model->g(3, zero.beta, zero.gamma);
  for (int j = 0; j < 4; ++j)
    CHECK(g0(j) == doctest::Approx(y_exact(3) * exact.col("z" + std::to_string(j))(3)));

  // doubling y, beta, gamma doubles the residual and hence g_t
  Dataset doubled;
  doubled.add("y", (2.0 * y_exact).eval());
  doubled.add("x", data.col("x"));
  doubled.add("w0", data.col("w0"));
  doubled.add("w1", data.col("w1"));
  for (int j = 0; j < 4; ++j) doubled.add("z" + std::to_string(j), data.col("z" + std::to_string(j)));
  auto model2 = make_linear_iv_model(doubled, "y", "x", cols("w", 2), cols("z", 4));
  ParamPoint pt{VectorXd::Constant(1, 0.4), (VectorXd(2) << 0.1, 0.2).finished()};
  ParamPoint pt2{2.0 * pt.beta, 2.0 * pt.gamma};
  CHECK((model2->g(7, pt2.beta, pt2.gamma) - 2.0 * model->g(7, pt.beta, pt.gamma)).norm() <= 1e-12);
}

TEST_CASE("order condition violations") {
  VectorXd gamma_true(2);
  gamma_true << 0.3, -0.7;
  Dataset data = random_iv_dataset(20, 2, 4, RngStream(6, 1), 1.0, gamma_true);
  CHECK_THROWS_AS(make_linear_iv_model(data, "y", "x", cols("w", 2), cols("z", 2)),
                  OrderConditionViolated);
  CHECK_THROWS_AS(make_local_projection_model(data, "y", "x", cols("w", 2), cols("z", 2), 1),
                  OrderConditionViolated);
}

TEST_CASE("jacobians match central finite differences") {
  VectorXd gamma_true(2);
  gamma_true << 0.3, -0.7;
  Dataset data = random_iv_dataset(30, 2, 4, RngStream(7, 2), 1.0, gamma_true);
  auto iv = make_linear_iv_model(data, "y", "x", cols("w", 2), cols("z", 4));
  auto lp = make_local_projection_model(data, "y", "x", cols("w", 1), cols("z", 3), 1);

  RngStream rng(8, 0);
  for (const MomentModel* m : {iv.get(), lp.get()}) {
    for (int rep = 0; rep < 20; ++rep) {
      VectorXd beta(m->d_beta()), gamma(m->d_gamma());
      for (int i = 0; i < beta.size(); ++i) beta(i) = rng.normal();
      for (int i = 0; i < gamma.size(); ++i) gamma(i) = rng.normal();
      const long t = static_cast<long>(rng.next_u64() % static_cast<std::uint64_t>(m->n()));
      const MatrixXd jg = m->dg_dgamma(t, beta, gamma);
      const MatrixXd jB = m->dg_dbeta(t, beta, gamma);
      for (int k = 0; k < m->d_gamma(); ++k) {
        const VectorXd fd = fd_gamma(*m, t, beta, gamma, k, 1e-5);
        CHECK((jg.col(k) - fd).norm() <= 1e-6 * std::max(1.0, fd.norm()));
      }
      for (int k = 0; k < m->d_beta(); ++k) {
        const VectorXd fd = fd_beta(*m, t, beta, gamma, k, 1e-5);
        CHECK((jB.col(k) - fd).norm() <= 1e-6 * std::max(1.0, fd.norm()));
      }
      // exact affinity in gamma: g(beta, gamma) = g(beta, 0) + jac * gamma
      const VectorXd lhs = m->g(t, beta, gamma);
      const VectorXd rhs = m->g(t, beta, VectorXd::Zero(m->d_gamma())) + jg * gamma;
      CHECK((lhs - rhs).norm() <= 1e-10 * std::max(1.0, lhs.norm()));
    }
  }
}

TEST_CASE("average_moments is permutation invariant") {
  VectorXd gamma_true(1);
  gamma_true << 0.4;
  Dataset data = random_iv_dataset(25, 1, 3, RngStream(9, 5), 1.0, gamma_true);
  // reversed copy
  Dataset rev;
  for (const auto& name : data.names()) rev.add(name, data.col(name).reverse().eval());
  auto a = make_linear_iv_model(data, "y", "x", cols("w", 1), cols("z", 3));
  auto b = make_linear_iv_model(rev, "y", "x", cols("w", 1), cols("z", 3));
  ParamPoint pt{VectorXd::Constant(1, 0.2), VectorXd::Constant(1, -0.1)};
  CHECK((average_moments(*a, pt) - average_moments(*b, pt)).norm() <= 1e-13);
}

TEST_CASE("nkpc adapter trimming and jacobians") {
  RngStream rng(11, 0);
  Eigen::VectorXd pi(100), x(100);
  for (long t = 0; t < 100; ++t) {
    pi(t) = rng.normal();
    x(t) = rng.normal();
  }
  Dataset data;
  data.add("pi", pi);
  data.add("x", x);

  auto lags3 = make_nkpc_model(data, "pi", "x", InstrumentSet::Lags3);
  CHECK(lags3->n() == 96);
  CHECK(lags3->d() == 6);
  CHECK(lags3->d_beta() == 1);
  CHECK(lags3->d_gamma() == 1);

  auto xlags = make_nkpc_model(data, "pi", "x", InstrumentSet::XLags);
  CHECK(xlags->n() == 97);
  CHECK(xlags->d() == 2);

  auto xtext = make_nkpc_model(data, "pi", "x", InstrumentSet::XLagsText);
  CHECK(xtext->n() == 98);

  // with lambda = gamma_f = 0 the moment is pi_t z_t; first usable t is 3
  VectorXd zero1 = VectorXd::Zero(1);
  VectorXd g = lags3->g(0, zero1, zero1);
  CHECK(g(0) == doctest::Approx(pi(3) * pi(2)));
  CHECK(g(1) == doctest::Approx(pi(3) * x(2)));
  CHECK(g(5) == doctest::Approx(pi(3) * x(0)));

  // dg/dlambda = -x_t z_t for all t
  for (long i : {0L, 10L, 95L}) {
    const long t = i + 3;
    const MatrixXd jg = lags3->dg_dgamma(i, zero1, zero1);
    CHECK(jg(0, 0) == doctest::Approx(-x(t) * pi(t - 1)));
    CHECK(jg(5, 0) == doctest::Approx(-x(t) * x(t - 3)));
    const MatrixXd jb = lags3->dg_dbeta(i, zero1, zero1);
    CHECK(jb(1, 0) == doctest::Approx(-pi(t + 1) * x(t - 1)));
  }

  // xlags-text uses contemporaneous x
  CHECK(xtext->g(0, zero1, zero1)(0) == doctest::Approx(pi(1) * x(1)));

  Dataset tiny;
  tiny.add("pi", pi.head(4).eval());
  tiny.add("x", x.head(4).eval());
  CHECK_THROWS_AS(make_nkpc_model(tiny, "pi", "x", InstrumentSet::Lags3), InsufficientSample);
}

TEST_CASE("local projection adapter dimensions and degeneracy") {
  VectorXd gamma_true(1);
  gamma_true << 0.4;
  Dataset data = random_iv_dataset(50, 1, 2, RngStream(13, 1), 0.8, gamma_true);

  auto h1 = make_local_projection_model(data, "y", "x", cols("w", 1), cols("z", 2), 1);
  CHECK(h1->d() == 4);
  CHECK(h1->d_beta() == 2);
  CHECK(h1->d_gamma() == 2);
  CHECK(h1->n() == 49);
  // df for the subset AR statistic in this layout
  CHECK(h1->d() - h1->d_gamma() == 2);

  // H = 0 collapses to the linear IV layout
  auto h0 = make_local_projection_model(data, "y", "x", cols("w", 1), cols("z", 2), 0);
  auto iv = make_linear_iv_model(data, "y", "x", cols("w", 1), cols("z", 2));
  ParamPoint pt{VectorXd::Constant(1, 0.8), gamma_true};
  CHECK((h0->g(5, pt.beta, pt.gamma) - iv->g(5, pt.beta, pt.gamma)).norm() <= 1e-14);

  CHECK_THROWS_AS(make_local_projection_model(data, "y", "x", cols("w", 1), cols("z", 2), -1),
                  InvalidHorizon);

  // exact fit at truth for a synthetic stacked system
  Dataset exact;
  Eigen::VectorXd x(20), w(20), z0(20), z1(20);
  RngStream rng(14, 0);
  for (long t = 0; t < 20; ++t) {
    x(t) = rng.normal();
    w(t) = rng.normal();
    z0(t) = rng.normal();
    z1(t) = rng.normal();
  }
  Eigen::VectorXd y = 0.5 * x + 0.25 * w;
  exact.add("y", y);
  exact.add("x", x);
  exact.add("w0", w);
  exact.add("z0", z0);
  exact.add("z1", z1);
  auto lp = make_local_projection_model(exact, "y", "x", cols("w", 1), cols("z", 2), 1);
  // y_{t+h} = 0.5 x_{t+h} + ..., an exact fit only at h = 0; test h = 0 block via H = 0
  auto lp0 = make_local_projection_model(exact, "y", "x", cols("w", 1), cols("z", 2), 0);
  ParamPoint truth{VectorXd::Constant(1, 0.5), VectorXd::Constant(1, 0.25)};
  CHECK(average_moments(*lp0, truth).norm() <= 1e-12);
  CHECK(lp->n() == 19);
}

TEST_CASE("csv round trip and rejection of bad rows") {
  const char* path = "test_moments_tmp.csv";
  {
    FILE* f = fopen(path, "w");
    fputs("a,b\n1.5,2\n-3e-2,4.25\n", f);
    fclose(f);
  }
  Dataset d = read_csv(path);
  CHECK(d.n() == 2);
  CHECK(d.col("a")(1) == doctest::Approx(-0.03));
  {
    FILE* f = fopen(path, "w");
    fputs("a,b\n1.5,2\nx,4\n", f);
    fclose(f);
  }
  CHECK_THROWS_WITH_AS(read_csv(path), doctest::Contains("row 3"), CsvFormatError);
  remove(path);
}
