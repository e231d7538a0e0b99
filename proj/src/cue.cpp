#include "subsetar/cue.hpp"

#include "subsetar/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <list>

namespace subsetar {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Weight-derivative correction for one parameter block. Column k is
//   1/2 n^{-1} sum_{t,s} w_ts [ (u'J_t^k) g_s + (u'g_t) J_s^k ],
// the symmetrized contraction of the vec(omega) derivative with
// omega^{-1} gbar; contracting it against u reproduces the exact
// derivative of the continuously-updated criterion.
MatrixXd weight_correction(const std::vector<const MatrixXd*>& jacs, const MatrixXd& rows,
                           const VectorXd& u, const KernelSpec& kernel) {
  const Eigen::Index d = rows.cols();
  const int p = static_cast<int>(jacs.size());
  MatrixXd corr(d, p);
  const MatrixXd a = rows * u;
  for (int k = 0; k < p; ++k) {
    const MatrixXd r = (*jacs[k]) * u;
    const MatrixXd s1 = kernel_weighted_cross(r, rows, kernel);
    const MatrixXd s2 = kernel_weighted_cross(a, *jacs[k], kernel);
    corr.col(k) = 0.5 * (s1 + s2).transpose();
  }
  return corr;
}

MatrixXd average_of_rows(const std::vector<const MatrixXd*>& jacs) {
  const Eigen::Index d = jacs.empty() ? 0 : jacs[0]->cols();
  MatrixXd out(d, static_cast<Eigen::Index>(jacs.size()));
  for (size_t k = 0; k < jacs.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = jacs[k]->colwise().mean().transpose();
  return out;
}

}  // namespace

CuePointEval cue_eval_point(const MomentModel& model, const ParamPoint& point, const KernelSpec& kernel) {
  CuePointEval ev;
  model.moment_rows(point.beta, point.gamma, ev.rows);
  if (!ev.rows.allFinite()) {
    for (long t = 0; t < ev.rows.rows(); ++t)
      if (!ev.rows.row(t).allFinite()) throw MomentEvaluationError("non-finite moment value", t);
  }
  ev.gbar = ev.rows.colwise().mean().transpose();
  ev.hac = hac_from_rows(ev.rows, kernel);
  ev.u = ev.hac.solve(ev.gbar);
  ev.q = static_cast<double>(model.n()) * ev.gbar.dot(ev.u);
  return ev;
}

namespace {

// Collects jacobian row stacks for one block, using the model cache when
// the stacks are parameter free.
class JacStack {
public:
  JacStack(const MomentModel& model, const ParamPoint& point, bool wrt_gamma) {
    const int p = wrt_gamma ? model.d_gamma() : model.d_beta();
    ptrs_.resize(static_cast<size_t>(p));
    for (int k = 0; k < p; ++k) {
      const MatrixXd* cached =
          wrt_gamma ? model.cached_jac_gamma_rows(k) : model.cached_jac_beta_rows(k);
      if (cached != nullptr) {
        ptrs_[static_cast<size_t>(k)] = cached;
      } else {
        owned_.emplace_back();
        if (wrt_gamma) model.jac_gamma_rows(point.beta, point.gamma, k, owned_.back());
        else model.jac_beta_rows(point.beta, point.gamma, k, owned_.back());
        ptrs_[static_cast<size_t>(k)] = &owned_.back();
      }
    }
  }
  const std::vector<const MatrixXd*>& ptrs() const { return ptrs_; }

private:
  std::vector<const MatrixXd*> ptrs_;
  std::list<MatrixXd> owned_;  // stable addresses
};

}  // namespace

MatrixXd cue_bracket_gamma(const MomentModel& model, const ParamPoint& point, const KernelSpec& kernel,
                           const CuePointEval& eval) {
  JacStack stack(model, point, true);
  return average_of_rows(stack.ptrs()) - weight_correction(stack.ptrs(), eval.rows, eval.u, kernel);
}

MatrixXd cue_bracket_beta(const MomentModel& model, const ParamPoint& point, const KernelSpec& kernel,
                          const CuePointEval& eval) {
  JacStack stack(model, point, false);
  return average_of_rows(stack.ptrs()) - weight_correction(stack.ptrs(), eval.rows, eval.u, kernel);
}

CueEvaluation cue_objective(const MomentModel& model, const VectorXd& beta0, const VectorXd& gamma,
                            const KernelSpec& kernel) {
  const ParamPoint point{beta0, gamma};
  CuePointEval ev = cue_eval_point(model, point, kernel);
  const MatrixXd bracket = cue_bracket_gamma(model, point, kernel, ev);
  CueEvaluation out;
  out.q = ev.q;
  out.grad_gamma = 2.0 * static_cast<double>(model.n()) * bracket.transpose() * ev.u;
  out.hac = std::move(ev.hac);
  out.gbar = std::move(ev.gbar);
  return out;
}

namespace {

// Criterion over the free coordinates of (beta, gamma).
class CueProblem {
public:
  CueProblem(const MomentModel& model, const KernelSpec& kernel, ParamPoint fixed,
             const std::vector<bool>& free_beta, const std::vector<bool>& free_gamma)
      : model_(model), kernel_(kernel), fixed_(std::move(fixed)) {
    for (int i = 0; i < model.d_beta(); ++i)
      if (free_beta[static_cast<size_t>(i)]) fb_.push_back(i);
    for (int i = 0; i < model.d_gamma(); ++i)
      if (free_gamma[static_cast<size_t>(i)]) fg_.push_back(i);
  }

  int dim() const { return static_cast<int>(fb_.size() + fg_.size()); }

  ParamPoint assemble(const VectorXd& x) const {
    ParamPoint pt = fixed_;
    for (size_t i = 0; i < fb_.size(); ++i) pt.beta(fb_[i]) = x(static_cast<Eigen::Index>(i));
    for (size_t i = 0; i < fg_.size(); ++i)
      pt.gamma(fg_[i]) = x(static_cast<Eigen::Index>(fb_.size() + i));
    return pt;
  }

  double value(const VectorXd& x) const {
    try {
      const CuePointEval ev = cue_eval_point(model_, assemble(x), kernel_);
      return std::isfinite(ev.q) ? ev.q : kInf;
    } catch (const SingularWeightMatrix&) {
      return kInf;
    } catch (const MomentEvaluationError&) {
      return kInf;
    }
  }

  double value_grad(const VectorXd& x, VectorXd& grad) const {
    try {
      const ParamPoint pt = assemble(x);
      const CuePointEval ev = cue_eval_point(model_, pt, kernel_);
      if (!std::isfinite(ev.q)) return kInf;
      grad.resize(dim());
      const double scale = 2.0 * static_cast<double>(model_.n());
      if (!fb_.empty()) {
        JacStack stack(model_, pt, false);
        std::vector<const MatrixXd*> sel;
        for (int idx : fb_) sel.push_back(stack.ptrs()[static_cast<size_t>(idx)]);
        const MatrixXd bracket =
            average_of_rows(sel) - weight_correction(sel, ev.rows, ev.u, kernel_);
        grad.head(static_cast<Eigen::Index>(fb_.size())) = scale * bracket.transpose() * ev.u;
      }
      if (!fg_.empty()) {
        JacStack stack(model_, pt, true);
        std::vector<const MatrixXd*> sel;
        for (int idx : fg_) sel.push_back(stack.ptrs()[static_cast<size_t>(idx)]);
        const MatrixXd bracket =
            average_of_rows(sel) - weight_correction(sel, ev.rows, ev.u, kernel_);
        grad.tail(static_cast<Eigen::Index>(fg_.size())) = scale * bracket.transpose() * ev.u;
      }
      return ev.q;
    } catch (const SingularWeightMatrix&) {
      return kInf;
    } catch (const MomentEvaluationError&) {
      return kInf;
    }
  }

  // Gauss-Newton step at the origin of the free coordinates under the
  // weight fixed there; 2SLS-style plug-in start for linear models.
  bool plug_in_start(VectorXd& out) const {
    try {
      const VectorXd zero = VectorXd::Zero(dim());
      const ParamPoint base = assemble(zero);
      const CuePointEval ev = cue_eval_point(model_, base, kernel_);
      MatrixXd m(model_.d(), dim());
      int col = 0;
      {
        JacStack stack(model_, base, false);
        for (int idx : fb_) {
          m.col(col++) = stack.ptrs()[static_cast<size_t>(idx)]->colwise().mean().transpose();
        }
      }
      {
        JacStack stack(model_, base, true);
        for (int idx : fg_) {
          m.col(col++) = stack.ptrs()[static_cast<size_t>(idx)]->colwise().mean().transpose();
        }
      }
      const MatrixXd wm = ev.hac.inverse();
      const MatrixXd mtm = m.transpose() * wm * m;
      const double top = std::max(mtm.cwiseAbs().maxCoeff(), 1e-300);
      out = -tsvd_pinv(mtm, 1e-12 * top * mtm.rows()) * (m.transpose() * (wm * ev.gbar));
      return out.allFinite();
    } catch (const Error&) {
      return false;
    }
  }

private:
  const MomentModel& model_;
  const KernelSpec& kernel_;
  ParamPoint fixed_;
  std::vector<int> fb_;
  std::vector<int> fg_;
};

struct PolishOutcome {
  VectorXd x;
  double f = kInf;
  bool grad_ok = false;
  bool at_boundary = false;
};

VectorXd clamp_box(VectorXd x, double lo, double hi) {
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = std::clamp(x(i), lo, hi);
  return x;
}

PolishOutcome bfgs_polish(const CueProblem& prob, VectorXd x0, const OptimOptions& opts) {
  const int p = prob.dim();
  PolishOutcome out;
  VectorXd x = clamp_box(std::move(x0), opts.box_lo, opts.box_hi);
  VectorXd g(p);
  double f = prob.value_grad(x, g);
  if (!std::isfinite(f)) return out;

  MatrixXd h = MatrixXd::Identity(p, p);
  bool first_update = true;
  int stagnant = 0;

  // iterate well past the nominal tolerance so the minimizer location is
  // pinned to near machine precision; grad_ok is still judged against the
  // nominal tolerance
  const double target_tol = std::min(opts.tol_grad, 1e-13);
  for (int it = 0; it < opts.max_iters; ++it) {
    const double gtol = target_tol * std::max(1.0, std::abs(f));
    if (g.lpNorm<Eigen::Infinity>() <= gtol) break;

    VectorXd dir = -(h * g);
    if (g.dot(dir) >= -1e-14 * g.norm() * dir.norm()) {
      h.setIdentity();
      dir = -g;
      first_update = true;
    }

    double alpha = 1.0;
    VectorXd x_new;
    double f_new = kInf;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = clamp_box(x + alpha * dir, opts.box_lo, opts.box_hi);
      const VectorXd step = x_new - x;
      if (step.norm() == 0.0) break;
      const double slope = g.dot(step);
      if (slope < 0.0) {
        f_new = prob.value(x_new);
        if (f_new <= f + 1e-4 * slope) {
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      // one restart along steepest descent, then give up on this start
      bool was_identity = dir.isApprox(-g);
      if (was_identity) break;
      h.setIdentity();
      first_update = true;
      dir = -g;
      alpha = 1.0;
      for (int ls = 0; ls < 60; ++ls) {
        x_new = clamp_box(x + alpha * dir, opts.box_lo, opts.box_hi);
        const VectorXd step = x_new - x;
        if (step.norm() == 0.0) break;
        const double slope = g.dot(step);
        if (slope < 0.0) {
          f_new = prob.value(x_new);
          if (f_new <= f + 1e-4 * slope) {
            accepted = true;
            break;
          }
        }
        alpha *= 0.5;
      }
      if (!accepted) break;
    }

    VectorXd g_new(p);
    const double f_check = prob.value_grad(x_new, g_new);
    if (!std::isfinite(f_check)) break;
    const VectorXd s = x_new - x;
    const VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      if (first_update) {
        h = (sy / yv.squaredNorm()) * MatrixXd::Identity(p, p);
        first_update = false;
      }
      const double rho = 1.0 / sy;
      const MatrixXd ident = MatrixXd::Identity(p, p);
      h = (ident - rho * s * yv.transpose()) * h * (ident - rho * yv * s.transpose()) +
          rho * s * s.transpose();
    }

    const bool tiny_step = s.norm() <= 1e-12 * std::max(1.0, x.norm());
    const bool tiny_gain = std::abs(f - f_new) <= 1e-15 * std::max(1.0, std::abs(f));
    x = x_new;
    f = f_new;
    g = g_new;
    if (tiny_step && tiny_gain) {
      if (++stagnant >= 2) break;
    } else {
      stagnant = 0;
    }
  }

  // Value comparisons saturate at sqrt(machine eps) around the minimum, so
  // finish by walking the analytic gradient toward zero; this pins the
  // minimizer location itself to near machine precision.
  if (std::isfinite(f)) {
    if (p == 1 && first_update) {
      // secant curvature for a useful Newton step out of a cold Hessian
      const double hfd = 1e-6 * (1.0 + std::abs(x(0)));
      VectorXd gp(p);
      if (std::isfinite(prob.value_grad(VectorXd::Constant(1, x(0) + hfd), gp))) {
        const double curv = (gp(0) - g(0)) / hfd;
        if (curv > 0.0) {
          h(0, 0) = 1.0 / curv;
          first_update = false;
        }
      }
    }
    for (int it = 0; it < 12; ++it) {
      const double gn = g.lpNorm<Eigen::Infinity>();
      if (gn <= 1e-14 * std::max(1.0, std::abs(f))) break;
      VectorXd step = -(h * g);
      bool improved = false;
      VectorXd x_try, g_try(p);
      double f_try = kInf;
      for (int halve = 0; halve < 8 && !improved; ++halve) {
        x_try = clamp_box(x + step, opts.box_lo, opts.box_hi);
        f_try = prob.value_grad(x_try, g_try);
        if (std::isfinite(f_try) && g_try.lpNorm<Eigen::Infinity>() < gn) improved = true;
        else step *= 0.5;
      }
      if (!improved) break;
      const VectorXd s = x_try - x;
      const VectorXd yv = g_try - g;
      const double sy = s.dot(yv);
      if (sy > 1e-12 * s.norm() * yv.norm()) {
        const double rho = 1.0 / sy;
        const MatrixXd ident = MatrixXd::Identity(p, p);
        h = (ident - rho * s * yv.transpose()) * h * (ident - rho * yv * s.transpose()) +
            rho * s * s.transpose();
      }
      x = x_try;
      f = f_try;
      g = g_try;
    }
  }

  const double gtol = opts.tol_grad * std::max(1.0, std::abs(f));
  out.grad_ok = out.grad_ok || g.lpNorm<Eigen::Infinity>() <= gtol;
  const double edge = 1e-9 * (opts.box_hi - opts.box_lo);
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (x(i) <= opts.box_lo + edge || x(i) >= opts.box_hi - edge) out.at_boundary = true;
  out.x = std::move(x);
  out.f = f;
  return out;
}

double golden_section(const CueProblem& prob, double a, double b, double c, double xtol,
                      double& fmin) {
  const double invphi = 0.6180339887498949;
  double x1 = c - invphi * (c - a);
  double x2 = a + invphi * (c - a);
  auto eval = [&](double t) { return prob.value(VectorXd::Constant(1, t)); };
  double f1 = eval(x1);
  double f2 = eval(x2);
  (void)b;
  while (c - a > xtol) {
    if (f1 <= f2) {
      c = x2;
      x2 = x1;
      f2 = f1;
      x1 = c - invphi * (c - a);
      f1 = eval(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + invphi * (c - a);
      f2 = eval(x2);
    }
  }
  const double xm = f1 <= f2 ? x1 : x2;
  fmin = std::min(f1, f2);
  return xm;
}

bool lexicographic_less(const VectorXd& a, const VectorXd& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a(i) < b(i)) return true;
    if (a(i) > b(i)) return false;
  }
  return false;
}

}  // namespace

CueMinResult minimize_cue(const MomentModel& model, const KernelSpec& kernel, const ParamPoint& fixed,
                          const std::vector<bool>& free_beta, const std::vector<bool>& free_gamma,
                          const OptimOptions& opts) {
  CueProblem prob(model, kernel, fixed, free_beta, free_gamma);
  const int p = prob.dim();
  CueMinResult res;

  if (p == 0) {
    const CuePointEval ev = cue_eval_point(model, fixed, kernel);
    res.point = fixed;
    res.q = ev.q;
    res.converged = true;
    return res;
  }

  std::vector<VectorXd> starts;
  // golden-section pre-scan seeds the polish for one-dimensional problems
  if (p == 1 && opts.prescan_points >= 8) {
    const int m = opts.prescan_points;
    std::vector<double> fs(static_cast<size_t>(m));
    const double step = (opts.box_hi - opts.box_lo) / (m - 1);
    for (int i = 0; i < m; ++i)
      fs[static_cast<size_t>(i)] = prob.value(VectorXd::Constant(1, opts.box_lo + i * step));
    std::vector<std::pair<double, int>> minima;
    for (int i = 0; i < m; ++i) {
      const double fi = fs[static_cast<size_t>(i)];
      if (!std::isfinite(fi)) continue;
      const double fl = i > 0 ? fs[static_cast<size_t>(i - 1)] : kInf;
      const double fr = i + 1 < m ? fs[static_cast<size_t>(i + 1)] : kInf;
      if (fi <= fl && fi <= fr) minima.emplace_back(fi, i);
    }
    std::sort(minima.begin(), minima.end());
    for (size_t j = 0; j < minima.size() && j < 3; ++j) {
      const int i = minima[j].second;
      const double a = opts.box_lo + std::max(0, i - 1) * step;
      const double c = opts.box_lo + std::min(m - 1, i + 1) * step;
      double fmin = kInf;
      const double xm = golden_section(prob, a, 0.0, c, 1e-11 * (opts.box_hi - opts.box_lo), fmin);
      starts.push_back(VectorXd::Constant(1, xm));
    }
  }

  VectorXd plug;
  if (prob.plug_in_start(plug)) starts.push_back(clamp_box(plug, opts.box_lo, opts.box_hi));
  starts.push_back(VectorXd::Zero(p));
  // latin hypercube fill with a dedicated deterministic stream
  const int lhs_count = std::max(0, opts.n_starts - 2);
  if (lhs_count > 0) {
    RngStream rng(opts.start_seed, 0);
    std::vector<std::vector<int>> perms(static_cast<size_t>(p));
    for (int i = 0; i < p; ++i) {
      auto& perm = perms[static_cast<size_t>(i)];
      perm.resize(static_cast<size_t>(lhs_count));
      for (int j = 0; j < lhs_count; ++j) perm[static_cast<size_t>(j)] = j;
      for (int j = lhs_count - 1; j > 0; --j) {
        const int k = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(j + 1));
        std::swap(perm[static_cast<size_t>(j)], perm[static_cast<size_t>(k)]);
      }
    }
    for (int j = 0; j < lhs_count; ++j) {
      VectorXd x(p);
      for (int i = 0; i < p; ++i) {
        const double u = rng.uniform();
        x(i) = opts.box_lo +
               (perms[static_cast<size_t>(i)][static_cast<size_t>(j)] + u) *
                   (opts.box_hi - opts.box_lo) / lhs_count;
      }
      starts.push_back(std::move(x));
    }
  }

  PolishOutcome best;
  bool have_best = false;
  for (const VectorXd& s : starts) {
    PolishOutcome cand = bfgs_polish(prob, s, opts);
    ++res.starts_used;
    if (!std::isfinite(cand.f)) continue;
    res.trace.emplace_back(cand.x, cand.f);
    if (!have_best) {
      best = cand;
      have_best = true;
      continue;
    }
    const double tol = 1e-12 * std::max(1.0, std::abs(best.f));
    if (cand.f < best.f - tol) {
      best = cand;
    } else if (std::abs(cand.f - best.f) <= tol && lexicographic_less(cand.x, best.x)) {
      best = cand;
    }
  }
  if (!have_best)
    throw OptimizationFailed("no start produced a finite criterion value (" +
                             std::to_string(res.starts_used) + " starts tried)");

  res.point = prob.assemble(best.x);
  res.q = best.f;
  res.converged = best.grad_ok || best.at_boundary;
  res.at_boundary = best.at_boundary;
  return res;
}

ArResult minimize_over_gamma(const MomentModel& model, const VectorXd& beta0, const KernelSpec& kernel,
                             const OptimOptions& opts) {
  ParamPoint fixed{beta0, VectorXd::Zero(model.d_gamma())};
  const std::vector<bool> free_beta(static_cast<size_t>(model.d_beta()), false);
  const std::vector<bool> free_gamma(static_cast<size_t>(model.d_gamma()), true);
  CueMinResult min = minimize_cue(model, kernel, fixed, free_beta, free_gamma, opts);

  ArResult out;
  out.ar_stat = min.q;
  out.gamma_hat = min.point.gamma;
  out.df = model.d() - model.d_gamma();
  out.n_starts_used = min.starts_used;
  out.converged = min.converged;
  out.at_boundary = min.at_boundary;
  out.objective_trace = std::move(min.trace);
  return out;
}

std::pair<ParamPoint, double> cue_full_estimate(const MomentModel& model, const KernelSpec& kernel,
                                                const OptimOptions& opts) {
  if (model.d() - model.d_beta() - model.d_gamma() < 0)
    throw OrderConditionViolated("underdetermined system: d < d_beta + d_gamma");
  ParamPoint fixed{VectorXd::Zero(model.d_beta()), VectorXd::Zero(model.d_gamma())};
  const std::vector<bool> free_beta(static_cast<size_t>(model.d_beta()), true);
  const std::vector<bool> free_gamma(static_cast<size_t>(model.d_gamma()), true);
  CueMinResult min = minimize_cue(model, kernel, fixed, free_beta, free_gamma, opts);
  return {min.point, min.q};
}

}  // namespace subsetar
