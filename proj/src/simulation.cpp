#include "subsetar/simulation.hpp"

#include "subsetar/errors.hpp"
#include "subsetar/inference.hpp"

#include <atomic>
#include <cmath>
#include <complex>
#include <mutex>
#include <sstream>
#include <thread>

namespace subsetar {

NkpcParams derive_nkpc_params(double rho, double rho2, double rho_eta_nu, double gamma_f,
                              double vol_xi_var) {
  if (vol_xi_var < 0.0) throw DegenerateDesign("volatility innovation variance must be >= 0");
  NkpcParams p;
  p.rho1 = rho * (1.0 - rho2);
  const double bracket = 1.0 - gamma_f * (p.rho1 + gamma_f * rho2);
  if (std::abs(bracket) < 1e-10)
    throw DegenerateDesign("1 - gamma_f (rho1 + gamma_f rho2) vanishes at gamma_f = " +
                           std::to_string(gamma_f));
  // unit shock variances: sigma_eta / sigma_nu = 1
  p.lambda = rho_eta_nu * bracket;
  p.alpha0 = p.lambda / bracket;
  p.alpha1 = p.lambda * gamma_f * rho2 / bracket;
  const double sigma_h2 = vol_xi_var / (1.0 - 0.81);
  p.kappa = std::exp(sigma_h2 / 4.0);
  return p;
}

namespace {

void check_stationary(double rho1, double rho2) {
  // companion roots of x_t = rho1 x_{t-1} + rho2 x_{t-2}
  const std::complex<double> disc = std::sqrt(std::complex<double>(rho1 * rho1 + 4.0 * rho2, 0.0));
  const std::complex<double> r1 = 0.5 * (rho1 + disc);
  const std::complex<double> r2 = 0.5 * (rho1 - disc);
  const double m = std::max(std::abs(r1), std::abs(r2));
  if (!(m < 1.0 / 1.001))
    throw DegenerateDesign("x process not stationary: companion root modulus " + std::to_string(m));
}

}  // namespace

Dataset simulate_nkpc(const NkpcConfig& config, RngStream rng) {
  if (config.T < 50) throw DegenerateDesign("need T >= 50");
  if (config.burn_in < 0) throw DegenerateDesign("burn-in must be non-negative");
  if (std::abs(config.rho_eta_nu) > 1.0) throw DegenerateDesign("|rho_eta_nu| must be <= 1");
  const NkpcParams p = derive_nkpc_params(config.rho, config.rho2, config.rho_eta_nu,
                                          config.gamma_f_true, config.vol_xi_var);
  check_stationary(p.rho1, config.rho2);

  const long total = config.burn_in + config.T + 1;
  Eigen::VectorXd pi(total), x(total);
  const double sigma_xi = std::sqrt(config.vol_xi_var);
  const double mix = std::sqrt(1.0 - config.rho_eta_nu * config.rho_eta_nu);
  double h1 = 0.0, h2 = 0.0, x1 = 0.0, x2 = 0.0;
  for (long t = 0; t < total; ++t) {
    const double xi1 = sigma_xi * rng.normal();
    const double xi2 = sigma_xi * rng.normal();
    const double e1 = rng.normal();
    const double e2 = rng.normal();
    const double eps1 = e1;
    const double eps2 = config.rho_eta_nu * e1 + mix * e2;
    h1 = 0.9 * h1 + xi1;
    h2 = 0.9 * h2 + xi2;
    const double eta = std::exp(0.5 * h1) * eps1 / p.kappa;
    const double nu = std::exp(0.5 * h2) * eps2 / p.kappa;
    const double xt = p.rho1 * x1 + config.rho2 * x2 + nu;
    pi(t) = (p.alpha0 * p.rho1 + p.alpha1) * x1 + p.alpha0 * config.rho2 * x2 + eta;
    x(t) = xt;
    x2 = x1;
    x1 = xt;
  }

  Dataset out;
  out.add("pi", pi.tail(config.T + 1).eval());
  out.add("x", x.tail(config.T + 1).eval());
  return out;
}

Dataset simulate_nkpc(const NkpcConfig& config) { return simulate_nkpc(config, RngStream(config.seed, 0)); }

Dataset simulate_linear_iv(const LinearIvConfig& config, RngStream rng) {
  const int dz = static_cast<int>(config.pi_x.size());
  const int dw = static_cast<int>(config.gamma_true.size());
  if (config.pi_w.rows() != dz || config.pi_w.cols() != dw)
    throw InvalidCovariance("pi_w must be d_z x d_w");
  const int de = 2 + dw;  // (eps, V_x, V_w)
  if (config.cov.rows() != de || config.cov.cols() != de)
    throw InvalidCovariance("covariance must be " + std::to_string(de) + " x " + std::to_string(de));
  const SpectralDecomp eig = sym_eig(config.cov);
  if (eig.eigenvalues(de - 1) < -1e-12 * std::max(eig.eigenvalues(0), 1.0))
    throw InvalidCovariance("covariance is not positive semidefinite");
  const MatrixXd factor =
      eig.eigenvectors * eig.eigenvalues.cwiseMax(0.0).cwiseSqrt().asDiagonal();

  Eigen::MatrixXd z(config.n, dz), w(config.n, dw);
  Eigen::VectorXd x(config.n), y(config.n);
  VectorXd raw(de);
  for (long t = 0; t < config.n; ++t) {
    for (int j = 0; j < dz; ++j) z(t, j) = rng.normal();
    for (int j = 0; j < de; ++j) raw(j) = rng.normal();
    const VectorXd shocks = factor * raw;
    x(t) = config.pi_x.dot(z.row(t)) + shocks(1);
    for (int j = 0; j < dw; ++j) w(t, j) = config.pi_w.col(j).dot(z.row(t)) + shocks(2 + j);
    y(t) = config.beta_true * x(t) + w.row(t) * config.gamma_true + shocks(0);
  }

  Dataset out;
  out.add("y", y);
  out.add("x", x);
  for (int j = 0; j < dw; ++j) out.add("w" + std::to_string(j), w.col(j));
  for (int j = 0; j < dz; ++j) out.add("z" + std::to_string(j), z.col(j));
  return out;
}

Dataset simulate_linear_iv(const LinearIvConfig& config) {
  return simulate_linear_iv(config, RngStream(config.seed, 0));
}

std::string McTable::to_csv() const {
  std::ostringstream out;
  out << header << "\n";
  for (const auto& row : rows) out << row << "\n";
  return out.str();
}

void parallel_for(long count, int threads, const std::function<void(long)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (long i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<long> next(0);
  std::exception_ptr first_error = nullptr;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      const long i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int use = static_cast<int>(std::min<long>(threads, count));
  pool.reserve(static_cast<size_t>(use));
  for (int i = 0; i < use; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

namespace {

struct RepOutcome {
  bool failed = false;
  bool reject_t = false;
  bool reject_ar = false;
  bool reject_klm = false;
};

// one replication of the three tests of gamma_f = gamma_f_null
RepOutcome run_replication(const NkpcConfig& config, long rep, double alpha,
                           const KernelSpec& kernel, const OptimOptions& opts) {
  RepOutcome out;
  try {
    const Dataset data = simulate_nkpc(config, RngStream(config.seed, static_cast<std::uint64_t>(rep)));
    const auto model = make_nkpc_model(data, "pi", "x", config.instrument_set);
    const VectorXd beta0 = VectorXd::Constant(1, config.gamma_f_null);
    out.reject_t = wald_t_test(*model, 0, config.gamma_f_null, kernel, alpha).reject;
    const TestResult ar = ar_test(*model, beta0, kernel, alpha, opts);
    out.reject_ar = ar.reject;
    out.reject_klm = klm_test(*model, beta0, kernel, alpha, opts).reject;
  } catch (const Error&) {
    out.failed = true;
  }
  return out;
}

void summarize_cell(McCell& cell, const std::vector<RepOutcome>& outcomes) {
  long fails = 0, n_t = 0, n_ar = 0, n_klm = 0;
  for (const auto& o : outcomes) {
    if (o.failed) {
      ++fails;
      continue;
    }
    n_t += o.reject_t ? 1 : 0;
    n_ar += o.reject_ar ? 1 : 0;
    n_klm += o.reject_klm ? 1 : 0;
  }
  cell.failures = fails;
  const long used = cell.reps - fails;
  if (fails > cell.reps / 100)
    throw OptimizationFailed("cell aborted: " + std::to_string(fails) + " of " +
                             std::to_string(cell.reps) + " replications failed");
  if (used <= 0) throw OptimizationFailed("cell has no usable replications");
  auto rate = [&](long k) { return static_cast<double>(k) / static_cast<double>(used); };
  auto se = [&](double p) { return std::sqrt(p * (1.0 - p) / static_cast<double>(used)); };
  for (const auto& [name, k] : std::initializer_list<std::pair<std::string, long>>{
           {"t", n_t}, {"AR_c", n_ar}, {"KLM", n_klm}}) {
    cell.rejection[name] = rate(k);
    cell.mc_se[name] = se(rate(k));
  }
}

}  // namespace

McTable run_size_experiment(std::vector<McCell>& cells, const KernelSpec& kernel,
                            const OptimOptions& opts, int threads) {
  for (const auto& cell : cells)
    if (cell.config.gamma_f_true != cell.config.gamma_f_null)
      throw Error("size experiment requires gamma_f_true == gamma_f_null");

  McTable table;
  table.header = "T,rho2,rho_eta_nu,instrument_set,test,rejection,mc_se,failures";
  for (auto& cell : cells) {
    if (cell.reps == 0) continue;
    std::vector<RepOutcome> outcomes(static_cast<size_t>(cell.reps));
    parallel_for(cell.reps, threads, [&](long rep) {
      outcomes[static_cast<size_t>(rep)] = run_replication(cell.config, rep, cell.alpha, kernel, opts);
    });
    summarize_cell(cell, outcomes);
    for (const std::string name : {"t", "AR_c", "KLM"}) {
      std::ostringstream row;
      row << cell.config.T << "," << format_g6(cell.config.rho2) << ","
          << format_g6(cell.config.rho_eta_nu) << "," << to_string(cell.config.instrument_set) << ","
          << name << "," << format_g6(cell.rejection[name]) << "," << format_g6(cell.mc_se[name])
          << "," << cell.failures;
      table.rows.push_back(row.str());
    }
  }
  return table;
}

McTable run_power_experiment(const McCell& base, const std::vector<double>& gamma_f_true_grid,
                             const KernelSpec& kernel, const OptimOptions& opts, int threads) {
  McTable table;
  table.header = "gamma_f_true,test,rejection,mc_se,failures";
  for (const double g : gamma_f_true_grid) {
    McCell cell = base;
    cell.config.gamma_f_true = g;
    if (cell.reps == 0) continue;
    std::vector<RepOutcome> outcomes(static_cast<size_t>(cell.reps));
    parallel_for(cell.reps, threads, [&](long rep) {
      outcomes[static_cast<size_t>(rep)] = run_replication(cell.config, rep, cell.alpha, kernel, opts);
    });
    summarize_cell(cell, outcomes);
    for (const std::string name : {"t", "AR_c", "KLM"}) {
      std::ostringstream row;
      row << format_g6(g) << "," << name << "," << format_g6(cell.rejection[name]) << ","
          << format_g6(cell.mc_se[name]) << "," << cell.failures;
      table.rows.push_back(row.str());
    }
  }
  return table;
}

}  // namespace subsetar
