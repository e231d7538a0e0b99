#include "subsetar/inference.hpp"

#include "subsetar/errors.hpp"

#include <algorithm>
#include <cmath>

namespace subsetar {

std::string to_string(TestKind kind) {
  switch (kind) {
    case TestKind::ArC: return "AR_c";
    case TestKind::Klm: return "KLM";
    case TestKind::T: return "t";
  }
  return "?";
}

TestResult ar_test(const MomentModel& model, const VectorXd& beta0, const KernelSpec& kernel,
                   double alpha, const OptimOptions& opts) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidProbability("alpha must be in (0,1)");
  const ArResult ar = minimize_over_gamma(model, beta0, kernel, opts);
  TestResult out;
  out.name = TestKind::ArC;
  out.stat = ar.ar_stat;
  out.df = ar.df;
  out.crit = chi2_quantile(out.df, 1.0 - alpha);
  out.pvalue = 1.0 - chi2_cdf(out.stat, out.df);
  out.reject = out.stat > out.crit;
  out.nuisance_at_null = ar.gamma_hat;
  out.converged = ar.converged;
  return out;
}

TestResult klm_test(const MomentModel& model, const VectorXd& beta0, const KernelSpec& kernel,
                    double alpha, const OptimOptions& opts) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidProbability("alpha must be in (0,1)");
  const ArResult ar = minimize_over_gamma(model, beta0, kernel, opts);
  const ParamPoint point{beta0, ar.gamma_hat};
  const CuePointEval ev = cue_eval_point(model, point, kernel);
  const MatrixXd omega_inv_sqrt = ev.hac.inverse_sqrt();
  const MatrixXd a_hat = omega_inv_sqrt * cue_bracket_gamma(model, point, kernel, ev);
  const MatrixXd d_hat = omega_inv_sqrt * cue_bracket_beta(model, point, kernel, ev);

  TestResult out;
  out.name = TestKind::Klm;
  const MatrixXd proj_a = projection_onto(a_hat, &out.rank_flag);
  const MatrixXd d_resid = d_hat - proj_a * d_hat;
  const MatrixXd proj_d = projection_onto(d_resid, &out.rank_flag);
  const VectorXd v = omega_inv_sqrt * ev.gbar;
  out.stat = static_cast<double>(model.n()) * v.dot(proj_d * v);
  out.df = model.d_beta();
  out.crit = chi2_quantile(out.df, 1.0 - alpha);
  out.pvalue = 1.0 - chi2_cdf(out.stat, out.df);
  out.reject = out.stat > out.crit;
  out.nuisance_at_null = ar.gamma_hat;
  out.converged = ar.converged;
  return out;
}

TestResult wald_t_test(const MomentModel& model, int component, double null_value,
                       const KernelSpec& kernel, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidProbability("alpha must be in (0,1)");
  const int p = model.d_beta() + model.d_gamma();
  if (component < 0 || component >= p) throw Error("component index out of range");

  // linear moment structure: gbar(theta) = m + J theta
  const ParamPoint zero{VectorXd::Zero(model.d_beta()), VectorXd::Zero(model.d_gamma())};
  const VectorXd m = average_moments(model, zero);
  MatrixXd j(model.d(), p);
  j.leftCols(model.d_beta()) = average_jac_beta(model, zero);
  j.rightCols(model.d_gamma()) = average_jac_gamma(model, zero);

  const MatrixXd gram = model.first_step_weight();
  MatrixXd w1;
  try {
    const SpectralDecomp eig = sym_eig(gram);
    if (!(eig.eigenvalues(gram.rows() - 1) * 1e12 > eig.eigenvalues(0)))
      throw SingularWeightMatrix("first-step weight singular");
    w1 = eig.eigenvectors * eig.eigenvalues.cwiseInverse().asDiagonal() * eig.eigenvectors.transpose();
  } catch (const Error&) {
    throw SingularDesign("first-step instrument Gram is singular");
  }

  auto gmm_step = [&](const MatrixXd& w) {
    const MatrixXd jtwj = j.transpose() * w * j;
    const SpectralDecomp eig = sym_eig(jtwj);
    if (!(eig.eigenvalues(jtwj.rows() - 1) * 1e12 > eig.eigenvalues(0)) ||
        !(eig.eigenvalues(0) > 0.0))
      throw SingularDesign("moment Jacobian is numerically rank deficient");
    const MatrixXd inv =
        eig.eigenvectors * eig.eigenvalues.cwiseInverse().asDiagonal() * eig.eigenvectors.transpose();
    const VectorXd theta = -inv * (j.transpose() * (w * m));
    return std::make_pair(theta, inv);
  };

  const VectorXd theta1 = gmm_step(w1).first;
  ParamPoint p1{theta1.head(model.d_beta()), theta1.tail(model.d_gamma())};
  const HacEstimate hac1 = hac_covariance(model, p1, kernel);
  const MatrixXd w2 = hac1.inverse();
  const auto [theta2, bread] = gmm_step(w2);
  ParamPoint p2{theta2.head(model.d_beta()), theta2.tail(model.d_gamma())};
  const HacEstimate hac2 = hac_covariance(model, p2, kernel);

  const MatrixXd meat = j.transpose() * w2 * hac2.omega * w2 * j;
  const MatrixXd cov = bread * meat * bread / static_cast<double>(model.n());
  const double se = std::sqrt(std::max(cov(component, component), 0.0));
  if (!(se > 0.0)) throw SingularDesign("zero standard error");

  TestResult out;
  out.name = TestKind::T;
  out.stat = std::abs((theta2(component) - null_value) / se);
  out.df = 1;
  out.crit = normal_quantile(1.0 - 0.5 * alpha);
  out.pvalue = 1.0 - chi2_cdf(out.stat * out.stat, 1);
  out.reject = out.stat > out.crit;
  out.nuisance_at_null = theta2.tail(model.d_gamma());
  return out;
}

ConfidenceSet invert_ar_ci(const MomentModel& model, const KernelSpec& kernel, double alpha,
                           const VectorXd& beta_grid, const OptimOptions& opts) {
  if (model.d_beta() != 1) throw Error("grid inversion requires a scalar beta");
  if (beta_grid.size() < 2) throw Error("need at least two grid points");
  for (Eigen::Index i = 0; i + 1 < beta_grid.size(); ++i)
    if (!(beta_grid(i) < beta_grid(i + 1))) throw Error("grid must be strictly increasing");

  ConfidenceSet out;
  out.alpha = alpha;
  out.grid = beta_grid;
  out.accepted.assign(static_cast<size_t>(beta_grid.size()), false);
  out.failed.assign(static_cast<size_t>(beta_grid.size()), false);

  auto accepts = [&](double b) {
    return !ar_test(model, VectorXd::Constant(1, b), kernel, alpha, opts).reject;
  };

  out.results.resize(static_cast<size_t>(beta_grid.size()));
  long first = -1, last = -1;
  for (Eigen::Index i = 0; i < beta_grid.size(); ++i) {
    bool ok = false;
    try {
      const TestResult r = ar_test(model, VectorXd::Constant(1, beta_grid(i)), kernel, alpha, opts);
      out.results[static_cast<size_t>(i)] = r;
      ok = !r.reject;
    } catch (const OptimizationFailed&) {
      out.failed[static_cast<size_t>(i)] = true;
      out.results[static_cast<size_t>(i)].converged = false;
      out.results[static_cast<size_t>(i)].reject = true;
    } catch (const SingularWeightMatrix&) {
      out.failed[static_cast<size_t>(i)] = true;
      out.results[static_cast<size_t>(i)].converged = false;
      out.results[static_cast<size_t>(i)].reject = true;
    }
    out.accepted[static_cast<size_t>(i)] = ok;
    if (ok) {
      if (first < 0) first = i;
      last = i;
    }
  }
  if (first < 0) {
    out.empty = true;
    return out;
  }
  out.empty = false;
  out.lower = out.grid(first);
  out.upper = out.grid(last);
  out.convex = true;
  for (long i = first; i <= last; ++i)
    if (!out.accepted[static_cast<size_t>(i)] && !out.failed[static_cast<size_t>(i)]) out.convex = false;

  // refine hull endpoints between the boundary grid cells
  auto bisect_edge = [&](double inside, double outside) {
    for (int it = 0; it < 60 && std::abs(outside - inside) > 1e-4; ++it) {
      const double mid = 0.5 * (inside + outside);
      bool ok = false;
      try {
        ok = accepts(mid);
      } catch (const Error&) {
        ok = false;
      }
      if (ok) inside = mid;
      else outside = mid;
    }
    return inside;
  };
  if (first > 0) out.lower = bisect_edge(out.grid(first), out.grid(first - 1));
  if (last + 1 < out.grid.size()) out.upper = bisect_edge(out.grid(last), out.grid(last + 1));
  return out;
}

ProjectionInterval project_ci(const MomentModel& model, const KernelSpec& kernel, double alpha,
                              int component, const ProjectionSearchOpts& search) {
  if (model.d_beta() <= 1) throw Error("projection requires d_beta > 1");
  if (component < 0 || component >= model.d_beta()) throw Error("component index out of range");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidProbability("alpha must be in (0,1)");

  ProjectionInterval out;
  out.df = model.d() - model.d_beta() - model.d_gamma() + 1;
  if (out.df < 1) throw OrderConditionViolated("projection degrees of freedom must be positive");
  out.crit = chi2_quantile(out.df, 1.0 - alpha);

  std::vector<bool> free_beta(static_cast<size_t>(model.d_beta()), true);
  free_beta[static_cast<size_t>(component)] = false;
  const std::vector<bool> free_gamma(static_cast<size_t>(model.d_gamma()), true);

  auto inner = [&](double b1) {
    ParamPoint fixed{VectorXd::Zero(model.d_beta()), VectorXd::Zero(model.d_gamma())};
    fixed.beta(component) = b1;
    const double n_stat =
        minimize_cue(model, kernel, fixed, free_beta, free_gamma, search.optim).q;
    return n_stat;
  };

  const auto [center, qmin] = cue_full_estimate(model, kernel, search.optim);
  if (qmin > out.crit) {
    out.empty = true;
    return out;
  }
  out.empty = false;
  const double b0 = center.beta(component);

  auto frontier = [&](int direction) {
    double inside = b0;
    double step = std::max(search.initial_step, 1e-3);
    double outside = inside;
    bool unbounded = true;
    for (int it = 0; it < search.max_doublings; ++it) {
      outside = inside + direction * step;
      double q;
      try {
        q = inner(outside);
      } catch (const Error&) {
        q = std::numeric_limits<double>::infinity();
      }
      if (q > out.crit) {
        unbounded = false;
        break;
      }
      inside = outside;
      step *= 2.0;
    }
    if (unbounded) return outside;
    while (std::abs(outside - inside) > search.tol) {
      const double mid = 0.5 * (inside + outside);
      double q;
      try {
        q = inner(mid);
      } catch (const Error&) {
        q = std::numeric_limits<double>::infinity();
      }
      if (q <= out.crit) inside = mid;
      else outside = mid;
    }
    return inside;
  };

  out.lower = frontier(-1);
  out.upper = frontier(+1);
  return out;
}

}  // namespace subsetar
