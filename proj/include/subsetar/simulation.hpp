#pragma once

#include "subsetar/cue.hpp"
#include "subsetar/dataset.hpp"
#include "subsetar/hac.hpp"
#include "subsetar/moments.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace subsetar {

struct NkpcParams {
  double rho1 = 0.0;
  double lambda = 0.0;
  double alpha0 = 0.0;
  double alpha1 = 0.0;
  double kappa = 1.0;
};

// Coefficients implied by the Phillips-curve design: rho1 = rho (1 - rho2),
// lambda = rho_eta_nu (1 - gamma_f (rho1 + gamma_f rho2)) with unit
// variances, alpha0 = lambda / bracket, alpha1 = lambda gamma_f rho2 /
// bracket, and kappa normalizing Var(eta) = Var(nu) = 1 under the
// stochastic-volatility scaling with log-volatility innovation variance
// vol_xi_var (kappa = 1 when the volatility is switched off).
NkpcParams derive_nkpc_params(double rho, double rho2, double rho_eta_nu, double gamma_f,
                              double vol_xi_var = 0.2);

struct NkpcConfig {
  long T = 100;  // usable series length net of burn-in (one extra period is
                 // simulated for the lead)
  double rho = 0.9;
  double rho2 = 0.0;
  double rho_eta_nu = 0.0;
  double gamma_f_true = 0.5;
  double gamma_f_null = 0.5;
  InstrumentSet instrument_set = InstrumentSet::Lags3;
  long burn_in = 200;
  std::uint64_t seed = 1;
  // Variance of the log-volatility innovations. 0 switches the stochastic
  // volatility off; the published size tables are reproduced by the
  // homoskedastic variant (see README).
  double vol_xi_var = 0.2;
};

// Bivariate inflation/output-gap series with AR(1) log-volatility in both
// shocks; columns "pi" and "x" of length T + 1.
Dataset simulate_nkpc(const NkpcConfig& config, RngStream rng);
Dataset simulate_nkpc(const NkpcConfig& config);

struct LinearIvConfig {
  long n = 500;
  double beta_true = 1.0;
  VectorXd gamma_true;  // d_w
  VectorXd pi_x;        // d_z first-stage coefficients for x
  MatrixXd pi_w;        // d_z x d_w first-stage coefficients for w
  MatrixXd cov;         // covariance of (eps, V_x, V_w')
  std::uint64_t seed = 1;
};

// iid design y = beta x + w'gamma + eps with x and w driven by the
// instruments; pi = 0 gives the unidentified case.
Dataset simulate_linear_iv(const LinearIvConfig& config, RngStream rng);
Dataset simulate_linear_iv(const LinearIvConfig& config);

struct McCell {
  NkpcConfig config;
  long reps = 2000;
  double alpha = 0.05;
  // filled by the experiment runners
  std::map<std::string, double> rejection;
  std::map<std::string, double> mc_se;
  long failures = 0;
};

struct McTable {
  std::string header;
  std::vector<std::string> rows;
  std::string to_csv() const;
};

// Deterministic replication-parallel loop: results depend only on the work
// function per index, never on the thread count.
void parallel_for(long count, int threads, const std::function<void(long)>& fn);

// Size experiment over a list of design cells: rejection frequencies of the
// t, AR and KLM tests of gamma_f = gamma_f_null. Requires
// gamma_f_true == gamma_f_null in every cell. A cell fails if more than 1%
// of its replications abort.
McTable run_size_experiment(std::vector<McCell>& cells, const KernelSpec& kernel,
                            const OptimOptions& opts, int threads);

// Power curves: the true gamma_f sweeps the grid while the null stays at
// config.gamma_f_null. Long format for plotting.
McTable run_power_experiment(const McCell& base, const std::vector<double>& gamma_f_true_grid,
                             const KernelSpec& kernel, const OptimOptions& opts, int threads);

}  // namespace subsetar
