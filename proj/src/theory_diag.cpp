#include "subsetar/theory_diag.hpp"

#include "subsetar/errors.hpp"

#include <algorithm>
#include <cmath>

namespace subsetar {

double default_truncation_eps(const MatrixXd& gamma_hat_matrix) {
  const SpectralDecomp eig = sym_eig(gamma_hat_matrix);
  return 1e-3 * std::max(eig.eigenvalues(0), 1.0);
}

MatrixXd build_A(const MomentModel& model, const ParamPoint& point0, const KernelSpec& kernel) {
  const CuePointEval ev = cue_eval_point(model, point0, kernel);
  return ev.hac.inverse_sqrt() * cue_bracket_gamma(model, point0, kernel, ev);
}

VectorXd perturbed_gamma(const MomentModel& model, const ParamPoint& point0, const KernelSpec& kernel,
                         double eps, DiagReport* partial) {
  if (!(eps > 0.0)) throw InvalidThreshold("truncation threshold must be positive");
  const CuePointEval ev = cue_eval_point(model, point0, kernel);
  const MatrixXd omega_inv_sqrt = ev.hac.inverse_sqrt();
  const MatrixXd a_hat = omega_inv_sqrt * cue_bracket_gamma(model, point0, kernel, ev);
  const MatrixXd jac = average_jac_gamma(model, point0);
  const MatrixXd gamma_mat = jac.transpose() * ev.hac.solve_matrix(jac);
  const VectorXd tilt = tsvd_pinv(0.5 * (gamma_mat + gamma_mat.transpose()), eps) *
                        (a_hat.transpose() * (omega_inv_sqrt * ev.gbar));
  const VectorXd gamma_tilde = point0.gamma - tilt;
  if (partial != nullptr) {
    partial->gamma_true = point0.gamma;
    partial->gamma_tilde = gamma_tilde;
    partial->eps_used = eps;
  }
  return gamma_tilde;
}

DiagReport bound_decomposition(const MomentModel& model, const ParamPoint& point0,
                               const KernelSpec& kernel, double eps, const OptimOptions& opts) {
  DiagReport report;
  const CuePointEval ev0 = cue_eval_point(model, point0, kernel);
  const MatrixXd omega_inv_sqrt0 = ev0.hac.inverse_sqrt();
  const MatrixXd a_hat = omega_inv_sqrt0 * cue_bracket_gamma(model, point0, kernel, ev0);
  const MatrixXd jac = average_jac_gamma(model, point0);
  const MatrixXd gamma_mat_raw = jac.transpose() * ev0.hac.solve_matrix(jac);
  const MatrixXd gamma_mat = 0.5 * (gamma_mat_raw + gamma_mat_raw.transpose());
  if (!(eps > 0.0)) eps = default_truncation_eps(gamma_mat);
  report.eps_used = eps;
  report.gamma_true = point0.gamma;

  const MatrixXd gamma_ring_pinv = tsvd_pinv(gamma_mat, eps);
  report.gamma_tilde =
      point0.gamma - gamma_ring_pinv * (a_hat.transpose() * (omega_inv_sqrt0 * ev0.gbar));

  // sandwich at the perturbed point, projection from the original point
  const ParamPoint tilde_point{point0.beta, report.gamma_tilde};
  const CuePointEval evt = cue_eval_point(model, tilde_point, kernel);
  const MatrixXd s_tilde = evt.hac.inverse_sqrt();
  const VectorXd v = s_tilde * evt.gbar;
  bool rank_deficient = false;
  const MatrixXd proj = projection_onto(a_hat, &rank_deficient, &report.proj_rank);
  const double n = static_cast<double>(model.n());
  const VectorXd pv = proj * v;
  report.varpi = n * v.dot(pv);
  report.m_term = n * (v.dot(v) - v.dot(pv));
  report.q_at_tilde = report.m_term + report.varpi;
  report.foc_residual_norm = (a_hat.transpose() * (omega_inv_sqrt0 * evt.gbar)).norm();

  const MatrixXd alt = a_hat * gamma_ring_pinv * a_hat.transpose();
  const SpectralDecomp gap = sym_eig(0.5 * ((proj - alt) + (proj - alt).transpose()));
  report.proj_gap = gap.eigenvalues.cwiseAbs().maxCoeff();

  report.ar_stat = minimize_over_gamma(model, point0.beta, kernel, opts).ar_stat;
  return report;
}

NullCheckSummary null_distribution_check(const NkpcConfig& design, long n, long reps, double eps,
                                         const KernelSpec& kernel, int threads) {
  NullCheckSummary summary;
  summary.reps = reps;
  if (reps == 0) return summary;

  NkpcConfig config = design;
  config.T = n;
  const NkpcParams params = derive_nkpc_params(config.rho, config.rho2, config.rho_eta_nu,
                                               config.gamma_f_true, config.vol_xi_var);

  std::vector<double> draws(static_cast<size_t>(reps), std::numeric_limits<double>::quiet_NaN());
  std::vector<double> bounds(static_cast<size_t>(reps), std::numeric_limits<double>::quiet_NaN());
  parallel_for(reps, threads, [&](long rep) {
    try {
      const Dataset data =
          simulate_nkpc(config, RngStream(config.seed, static_cast<std::uint64_t>(rep)));
      const auto model = make_nkpc_model(data, "pi", "x", config.instrument_set);
      const ParamPoint truth{VectorXd::Constant(1, config.gamma_f_true),
                             VectorXd::Constant(1, params.lambda)};
      const CuePointEval ev = cue_eval_point(*model, truth, kernel);
      const MatrixXd omega_inv_sqrt = ev.hac.inverse_sqrt();
      const MatrixXd a_hat = omega_inv_sqrt * cue_bracket_gamma(*model, truth, kernel, ev);
      const MatrixXd proj = projection_onto(a_hat);
      const VectorXd v = omega_inv_sqrt * ev.gbar;
      draws[static_cast<size_t>(rep)] =
          static_cast<double>(model->n()) * (v.dot(v) - v.dot(proj * v));

      // upper bound route: sandwich re-evaluated at the perturbed
      // nuisance, projection kept from the true point
      const MatrixXd jac = average_jac_gamma(*model, truth);
      const MatrixXd gm_raw = jac.transpose() * ev.hac.solve_matrix(jac);
      const MatrixXd gm = 0.5 * (gm_raw + gm_raw.transpose());
      const double eps_used = eps > 0.0 ? eps : default_truncation_eps(gm);
      const VectorXd gamma_tilde =
          truth.gamma - tsvd_pinv(gm, eps_used) * (a_hat.transpose() * (omega_inv_sqrt * ev.gbar));
      const CuePointEval evt =
          cue_eval_point(*model, ParamPoint{truth.beta, gamma_tilde}, kernel);
      const VectorXd vt = evt.hac.inverse_sqrt() * evt.gbar;
      bounds[static_cast<size_t>(rep)] = static_cast<double>(model->n()) * vt.dot(vt);
    } catch (const Error&) {
      // left as NaN, dropped below
    }
  });

  summary.draws.reserve(static_cast<size_t>(reps));
  for (double v : draws)
    if (std::isfinite(v)) summary.draws.push_back(v);
  std::sort(summary.draws.begin(), summary.draws.end());
  for (double v : bounds)
    if (std::isfinite(v)) summary.bound_draws.push_back(v);
  std::sort(summary.bound_draws.begin(), summary.bound_draws.end());
  const long used = static_cast<long>(summary.draws.size());
  if (used == 0) throw OptimizationFailed("no usable replications in null distribution check");

  // degrees of freedom of the bounding statistic
  const Dataset probe = simulate_nkpc(config, RngStream(config.seed, 0));
  const auto probe_model = make_nkpc_model(probe, "pi", "x", config.instrument_set);
  summary.df = probe_model->d() - probe_model->d_gamma();

  double ks = 0.0;
  for (long i = 0; i < used; ++i) {
    const double f = chi2_cdf(summary.draws[static_cast<size_t>(i)], summary.df);
    ks = std::max(ks, std::abs((i + 1.0) / used - f));
    ks = std::max(ks, std::abs(f - static_cast<double>(i) / used));
  }
  summary.ks_distance = ks;
  summary.ks_critical_95 = 1.358 / std::sqrt(static_cast<double>(used));
  auto q95 = [](const std::vector<double>& sorted) {
    if (sorted.empty()) return 0.0;
    const long m = static_cast<long>(sorted.size());
    const long idx = std::min<long>(m - 1, static_cast<long>(std::ceil(0.95 * m)) - 1);
    return sorted[static_cast<size_t>(std::max<long>(idx, 0))];
  };
  summary.empirical_q95 = q95(summary.draws);
  summary.bound_q95 = q95(summary.bound_draws);
  summary.chi2_q95 = chi2_quantile(summary.df, 0.95);
  return summary;
}

}  // namespace subsetar
