#include "subsetar/moments.hpp"

#include "subsetar/errors.hpp"

#include <cmath>

namespace subsetar {

void MomentModel::moment_rows(const VectorXd& beta, const VectorXd& gamma, MatrixXd& rows) const {
  rows.resize(n_, d_);
  for (long t = 0; t < n_; ++t) rows.row(t) = g(t, beta, gamma).transpose();
}

void MomentModel::jac_gamma_rows(const VectorXd& beta, const VectorXd& gamma, int k, MatrixXd& rows) const {
  rows.resize(n_, d_);
  for (long t = 0; t < n_; ++t) rows.row(t) = dg_dgamma(t, beta, gamma).col(k).transpose();
}

void MomentModel::jac_beta_rows(const VectorXd& beta, const VectorXd& gamma, int k, MatrixXd& rows) const {
  rows.resize(n_, d_);
  for (long t = 0; t < n_; ++t) rows.row(t) = dg_dbeta(t, beta, gamma).col(k).transpose();
}

LinearMomentModel::LinearMomentModel(MatrixXd g0, std::vector<MatrixXd> jac_beta,
                                     std::vector<MatrixXd> jac_gamma)
    : g0_(std::move(g0)), jb_(std::move(jac_beta)), jg_(std::move(jac_gamma)) {
  n_ = g0_.rows();
  d_ = static_cast<int>(g0_.cols());
  d_beta_ = static_cast<int>(jb_.size());
  d_gamma_ = static_cast<int>(jg_.size());
  linear_in_gamma_ = true;
  if (n_ < 1) throw InsufficientSample("no usable observations after trimming");
  if (d_ - d_gamma_ <= 0)
    throw OrderConditionViolated("need d - d_gamma > 0, got d = " + std::to_string(d_) +
                                 ", d_gamma = " + std::to_string(d_gamma_));
}

VectorXd LinearMomentModel::g(long t, const VectorXd& beta, const VectorXd& gamma) const {
  VectorXd out = g0_.row(t).transpose();
  for (int k = 0; k < d_beta_; ++k) out += beta(k) * jb_[static_cast<size_t>(k)].row(t).transpose();
  for (int k = 0; k < d_gamma_; ++k) out += gamma(k) * jg_[static_cast<size_t>(k)].row(t).transpose();
  return out;
}

MatrixXd LinearMomentModel::dg_dgamma(long t, const VectorXd&, const VectorXd&) const {
  MatrixXd out(d_, d_gamma_);
  for (int k = 0; k < d_gamma_; ++k) out.col(k) = jg_[static_cast<size_t>(k)].row(t).transpose();
  return out;
}

MatrixXd LinearMomentModel::dg_dbeta(long t, const VectorXd&, const VectorXd&) const {
  MatrixXd out(d_, d_beta_);
  for (int k = 0; k < d_beta_; ++k) out.col(k) = jb_[static_cast<size_t>(k)].row(t).transpose();
  return out;
}

void LinearMomentModel::moment_rows(const VectorXd& beta, const VectorXd& gamma, MatrixXd& rows) const {
  rows = g0_;
  for (int k = 0; k < d_beta_; ++k) rows += beta(k) * jb_[static_cast<size_t>(k)];
  for (int k = 0; k < d_gamma_; ++k) rows += gamma(k) * jg_[static_cast<size_t>(k)];
}

void LinearMomentModel::jac_gamma_rows(const VectorXd&, const VectorXd&, int k, MatrixXd& rows) const {
  rows = jg_[static_cast<size_t>(k)];
}

void LinearMomentModel::jac_beta_rows(const VectorXd&, const VectorXd&, int k, MatrixXd& rows) const {
  rows = jb_[static_cast<size_t>(k)];
}

MatrixXd LinearMomentModel::first_step_weight() const {
  if (gram_.size() == 0) return MatrixXd::Identity(d_, d_);
  return gram_;
}

VectorXd average_moments(const MomentModel& model, const ParamPoint& point) {
  if (model.n() < 1) throw InsufficientSample("empty sample");
  MatrixXd rows;
  model.moment_rows(point.beta, point.gamma, rows);
  if (!rows.allFinite()) {
    for (long t = 0; t < rows.rows(); ++t)
      if (!rows.row(t).allFinite()) throw MomentEvaluationError("non-finite moment value", t);
  }
  return rows.colwise().mean().transpose();
}

MatrixXd average_jac_gamma(const MomentModel& model, const ParamPoint& point) {
  MatrixXd out = MatrixXd::Zero(model.d(), model.d_gamma());
  MatrixXd rows;
  for (int k = 0; k < model.d_gamma(); ++k) {
    model.jac_gamma_rows(point.beta, point.gamma, k, rows);
    out.col(k) = rows.colwise().mean().transpose();
  }
  return out;
}

MatrixXd average_jac_beta(const MomentModel& model, const ParamPoint& point) {
  MatrixXd out = MatrixXd::Zero(model.d(), model.d_beta());
  MatrixXd rows;
  for (int k = 0; k < model.d_beta(); ++k) {
    model.jac_beta_rows(point.beta, point.gamma, k, rows);
    out.col(k) = rows.colwise().mean().transpose();
  }
  return out;
}

std::unique_ptr<MomentModel> make_linear_iv_model(const Dataset& data, const std::string& y,
                                                  const std::string& x,
                                                  const std::vector<std::string>& w,
                                                  const std::vector<std::string>& z) {
  const int dw = static_cast<int>(w.size());
  const int dz = static_cast<int>(z.size());
  if (dw < 1) throw OrderConditionViolated("need at least one control column w");
  if (dz <= dw)
    throw OrderConditionViolated("need d_z > d_w, got d_z = " + std::to_string(dz) +
                                 ", d_w = " + std::to_string(dw));
  const long n = data.n();
  if (n < 1) throw InsufficientSample("dataset is empty");

  const VectorXd& yv = data.col(y);
  const VectorXd& xv = data.col(x);
  MatrixXd zm(n, dz);
  for (int j = 0; j < dz; ++j) zm.col(j) = data.col(z[static_cast<size_t>(j)]);
  MatrixXd wm(n, dw);
  for (int j = 0; j < dw; ++j) wm.col(j) = data.col(w[static_cast<size_t>(j)]);

  MatrixXd g0 = zm.array().colwise() * yv.array();
  std::vector<MatrixXd> jb(1), jg(static_cast<size_t>(dw));
  jb[0] = -(zm.array().colwise() * xv.array()).matrix();
  for (int k = 0; k < dw; ++k)
    jg[static_cast<size_t>(k)] = -(zm.array().colwise() * wm.col(k).array()).matrix();
  auto model = std::make_unique<LinearMomentModel>(std::move(g0), std::move(jb), std::move(jg));
  model->set_first_step_weight(zm.transpose() * zm / static_cast<double>(n));
  return model;
}

std::string to_string(InstrumentSet set) {
  switch (set) {
    case InstrumentSet::Lags3: return "lags3";
    case InstrumentSet::XLags: return "xlags";
    case InstrumentSet::XLagsText: return "xlags-text";
  }
  return "?";
}

std::unique_ptr<MomentModel> make_nkpc_model(const Dataset& data, const std::string& pi,
                                             const std::string& x, InstrumentSet set) {
  const VectorXd& pv = data.col(pi);
  const VectorXd& xv = data.col(x);
  const long len = data.n();

  // all used t must have the deepest lag and the pi_{t+1} lead
  long max_lag = 0;
  switch (set) {
    case InstrumentSet::Lags3: max_lag = 3; break;
    case InstrumentSet::XLags: max_lag = 2; break;
    case InstrumentSet::XLagsText: max_lag = 1; break;
  }
  const long first = max_lag;
  const long last = len - 2;  // t+1 must exist
  const long n = last - first + 1;
  if (n < 1)
    throw InsufficientSample("series of length " + std::to_string(len) +
                             " too short for instrument set " + to_string(set));

  const int dz = set == InstrumentSet::Lags3 ? 6 : 2;
  MatrixXd zm(n, dz);
  for (long i = 0; i < n; ++i) {
    const long t = first + i;
    switch (set) {
      case InstrumentSet::Lags3:
        zm.row(i) << pv(t - 1), xv(t - 1), pv(t - 2), xv(t - 2), pv(t - 3), xv(t - 3);
        break;
      case InstrumentSet::XLags:
        zm.row(i) << xv(t - 1), xv(t - 2);
        break;
      case InstrumentSet::XLagsText:
        zm.row(i) << xv(t), xv(t - 1);
        break;
    }
  }

  MatrixXd g0(n, dz);
  std::vector<MatrixXd> jb(1), jg(1);
  jb[0].resize(n, dz);
  jg[0].resize(n, dz);
  for (long i = 0; i < n; ++i) {
    const long t = first + i;
    g0.row(i) = pv(t) * zm.row(i);
    jb[0].row(i) = -pv(t + 1) * zm.row(i);  // beta = gamma_f on pi_{t+1}
    jg[0].row(i) = -xv(t) * zm.row(i);      // gamma = lambda on x_t
  }
  auto model = std::make_unique<LinearMomentModel>(std::move(g0), std::move(jb), std::move(jg));
  model->set_first_step_weight(zm.transpose() * zm / static_cast<double>(n));
  return model;
}

std::unique_ptr<MomentModel> make_local_projection_model(const Dataset& data, const std::string& y,
                                                         const std::string& x,
                                                         const std::vector<std::string>& w,
                                                         const std::vector<std::string>& z,
                                                         int horizon) {
  if (horizon < 0) throw InvalidHorizon("horizon must be >= 0, got " + std::to_string(horizon));
  const int dq = horizon + 1;
  const int dw = static_cast<int>(w.size());
  const int dz = static_cast<int>(z.size());
  if (dw < 1) throw OrderConditionViolated("need at least one control column w");
  const int d = dq * dz;
  const int dgam = dq * dw;
  if (d - dgam <= 0)
    throw OrderConditionViolated("need (H+1) d_z > (H+1) d_w, got d_z = " + std::to_string(dz) +
                                 ", d_w = " + std::to_string(dw));

  const VectorXd& yv = data.col(y);
  const VectorXd& xv = data.col(x);
  const long n = data.n() - horizon;
  if (n < 1) throw InsufficientSample("series too short for horizon " + std::to_string(horizon));

  MatrixXd zm(n, dz);
  for (int j = 0; j < dz; ++j) zm.col(j) = data.col(z[static_cast<size_t>(j)]).head(n);
  MatrixXd wm(n, dw);
  for (int j = 0; j < dw; ++j) wm.col(j) = data.col(w[static_cast<size_t>(j)]).head(n);

  // g_t blocks h = 0..H: (y_{t+h} - x_t beta_h - w_t' gamma_h) z_t
  MatrixXd g0 = MatrixXd::Zero(n, d);
  std::vector<MatrixXd> jb(static_cast<size_t>(dq), MatrixXd::Zero(n, d));
  std::vector<MatrixXd> jg(static_cast<size_t>(dgam), MatrixXd::Zero(n, d));
  for (int h = 0; h < dq; ++h) {
    for (long t = 0; t < n; ++t) {
      g0.row(t).segment(h * dz, dz) = yv(t + h) * zm.row(t);
      jb[static_cast<size_t>(h)].row(t).segment(h * dz, dz) = -xv(t) * zm.row(t);
      for (int m = 0; m < dw; ++m)
        jg[static_cast<size_t>(h * dw + m)].row(t).segment(h * dz, dz) = -wm(t, m) * zm.row(t);
    }
  }
  auto model = std::make_unique<LinearMomentModel>(std::move(g0), std::move(jb), std::move(jg));
  MatrixXd gram = MatrixXd::Zero(d, d);
  const MatrixXd zz = zm.transpose() * zm / static_cast<double>(n);
  for (int h = 0; h < dq; ++h) gram.block(h * dz, h * dz, dz, dz) = zz;
  model->set_first_step_weight(std::move(gram));
  return model;
}

}  // namespace subsetar
