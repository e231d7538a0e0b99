#pragma once

#include "subsetar/dataset.hpp"

#include <Eigen/Core>

#include <memory>
#include <string>
#include <vector>

namespace subsetar {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ParamPoint {
  VectorXd beta;
  VectorXd gamma;
};

// Per-observation moment function g_t(beta, gamma) with Jacobians in both
// parameter blocks. Models capture their data at construction and are
// read-only afterwards, so concurrent evaluation is safe.
class MomentModel {
public:
  virtual ~MomentModel() = default;

  int d() const { return d_; }
  int d_beta() const { return d_beta_; }
  int d_gamma() const { return d_gamma_; }
  long n() const { return n_; }
  bool linear_in_gamma() const { return linear_in_gamma_; }

  virtual VectorXd g(long t, const VectorXd& beta, const VectorXd& gamma) const = 0;
  // d x d_gamma
  virtual MatrixXd dg_dgamma(long t, const VectorXd& beta, const VectorXd& gamma) const = 0;
  // d x d_beta
  virtual MatrixXd dg_dbeta(long t, const VectorXd& beta, const VectorXd& gamma) const = 0;

  // Bulk evaluation, row t of `rows` is g_t'. Defaults loop over g().
  virtual void moment_rows(const VectorXd& beta, const VectorXd& gamma, MatrixXd& rows) const;
  // Row t is (dg_t/dgamma_k)'.
  virtual void jac_gamma_rows(const VectorXd& beta, const VectorXd& gamma, int k, MatrixXd& rows) const;
  virtual void jac_beta_rows(const VectorXd& beta, const VectorXd& gamma, int k, MatrixXd& rows) const;

  // Non-null when the Jacobian stacks do not depend on the evaluation point
  // (linear models); avoids per-evaluation copies in the optimizer.
  virtual const MatrixXd* cached_jac_gamma_rows(int /*k*/) const { return nullptr; }
  virtual const MatrixXd* cached_jac_beta_rows(int /*k*/) const { return nullptr; }

  // Instrument Gram used as a 2SLS-style first-step GMM weight; identity
  // when the model has no natural instrument block.
  virtual MatrixXd first_step_weight() const { return MatrixXd::Identity(d_, d_); }

protected:
  int d_ = 0;
  int d_beta_ = 0;
  int d_gamma_ = 0;
  long n_ = 0;
  bool linear_in_gamma_ = false;
};

// Stacked instrumental-variable moments g_t = (y_t - XB_t beta - XG_t gamma) (x) z_t
// shared by the linear IV, NKPC and local-projection adapters. The row
// stacks make the moment matrix affine in (beta, gamma).
class LinearMomentModel final : public MomentModel {
public:
  LinearMomentModel(MatrixXd g0, std::vector<MatrixXd> jac_beta, std::vector<MatrixXd> jac_gamma);

  VectorXd g(long t, const VectorXd& beta, const VectorXd& gamma) const override;
  MatrixXd dg_dgamma(long t, const VectorXd& beta, const VectorXd& gamma) const override;
  MatrixXd dg_dbeta(long t, const VectorXd& beta, const VectorXd& gamma) const override;
  void moment_rows(const VectorXd& beta, const VectorXd& gamma, MatrixXd& rows) const override;
  void jac_gamma_rows(const VectorXd& beta, const VectorXd& gamma, int k, MatrixXd& rows) const override;
  void jac_beta_rows(const VectorXd& beta, const VectorXd& gamma, int k, MatrixXd& rows) const override;
  const MatrixXd* cached_jac_gamma_rows(int k) const override { return &jg_[static_cast<size_t>(k)]; }
  const MatrixXd* cached_jac_beta_rows(int k) const override { return &jb_[static_cast<size_t>(k)]; }
  MatrixXd first_step_weight() const override;
  void set_first_step_weight(MatrixXd gram) { gram_ = std::move(gram); }

private:
  MatrixXd g0_;               // n x d rows at (beta, gamma) = 0
  std::vector<MatrixXd> jb_;  // d_beta stacks, n x d each
  std::vector<MatrixXd> jg_;  // d_gamma stacks, n x d each
  MatrixXd gram_;             // optional instrument Gram
};

// n^{-1} sum_t g_t at `point`; throws MomentEvaluationError naming the
// offending observation when a row is non-finite.
VectorXd average_moments(const MomentModel& model, const ParamPoint& point);

// d x d_gamma / d x d_beta averaged Jacobians.
MatrixXd average_jac_gamma(const MomentModel& model, const ParamPoint& point);
MatrixXd average_jac_beta(const MomentModel& model, const ParamPoint& point);

// y_t = x_t beta + w_t' gamma + error, instruments z_t; requires d_z > d_w.
std::unique_ptr<MomentModel> make_linear_iv_model(const Dataset& data, const std::string& y,
                                                  const std::string& x,
                                                  const std::vector<std::string>& w,
                                                  const std::vector<std::string>& z);

enum class InstrumentSet {
  Lags3,      // [pi_{t-1}, x_{t-1}, pi_{t-2}, x_{t-2}, pi_{t-3}, x_{t-3}]
  XLags,      // [x_{t-1}, x_{t-2}]   (table/figure captions)
  XLagsText,  // [x_t, x_{t-1}]       (running-text variant)
};

std::string to_string(InstrumentSet set);

// Phillips-curve moments z_t (pi_t - lambda x_t - gamma_f pi_{t+1}); the
// tested parameter is gamma_f, the nuisance is lambda. Boundary
// observations are trimmed so that every used t has all lags and the lead.
std::unique_ptr<MomentModel> make_nkpc_model(const Dataset& data, const std::string& pi,
                                             const std::string& x, InstrumentSet set);

// Local projections at horizons 0..H stacked into one GMM system with
// instruments z_t: d = (H+1) d_z, d_beta = H+1, d_gamma = (H+1) d_w.
std::unique_ptr<MomentModel> make_local_projection_model(const Dataset& data, const std::string& y,
                                                         const std::string& x,
                                                         const std::vector<std::string>& w,
                                                         const std::vector<std::string>& z,
                                                         int horizon);

}  // namespace subsetar
