#pragma once

#include "subsetar/hac.hpp"
#include "subsetar/moments.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace subsetar {

struct CueEvaluation {
  double q = 0.0;          // n * gbar' omega^{-1} gbar
  VectorXd grad_gamma;     // analytic continuous-updating gradient
  HacEstimate hac;
  VectorXd gbar;
};

struct OptimOptions {
  double tol_grad = 1e-8;  // scaled by max(1, |Q|)
  int max_iters = 200;
  int n_starts = 8;        // plug-in, origin, then latin-hypercube fill
  double box_lo = -50.0;   // parameter box, per coordinate
  double box_hi = 50.0;
  int prescan_points = 1024;  // one-dimensional searches only
  std::uint64_t start_seed = 0x5eedbeefULL;
};

struct ArResult {
  double ar_stat = 0.0;
  VectorXd gamma_hat;
  int df = 0;
  int n_starts_used = 0;
  bool converged = false;
  bool at_boundary = false;
  // polished minimum of every start that produced a finite value
  std::vector<std::pair<VectorXd, double>> objective_trace;
};

// All reusable pieces of one criterion evaluation at a fixed point.
struct CuePointEval {
  MatrixXd rows;  // n x d moment rows
  VectorXd gbar;
  HacEstimate hac;
  VectorXd u;  // omega^{-1} gbar
  double q = 0.0;
};

CuePointEval cue_eval_point(const MomentModel& model, const ParamPoint& point, const KernelSpec& kernel);

// Bracket of the criterion derivative in a parameter block: the averaged
// Jacobian minus the weight-derivative correction. The gradient of Q in
// that block is 2n * bracket' * omega^{-1} * gbar, and omega^{-1/2} times
// the gamma bracket is the orthogonalized Jacobian direction used by the
// score-type statistics.
MatrixXd cue_bracket_gamma(const MomentModel& model, const ParamPoint& point, const KernelSpec& kernel,
                           const CuePointEval& eval);
MatrixXd cue_bracket_beta(const MomentModel& model, const ParamPoint& point, const KernelSpec& kernel,
                          const CuePointEval& eval);

CueEvaluation cue_objective(const MomentModel& model, const VectorXd& beta0, const VectorXd& gamma,
                            const KernelSpec& kernel);

// Criterion minimization over any subset of (beta, gamma); coordinates with
// free_* false stay at their `fixed` values. Throws OptimizationFailed only
// when every start fails to produce a finite criterion value.
struct CueMinResult {
  ParamPoint point;
  double q = std::numeric_limits<double>::infinity();
  bool converged = false;
  bool at_boundary = false;
  int starts_used = 0;
  std::vector<std::pair<VectorXd, double>> trace;
};

CueMinResult minimize_cue(const MomentModel& model, const KernelSpec& kernel, const ParamPoint& fixed,
                          const std::vector<bool>& free_beta, const std::vector<bool>& free_gamma,
                          const OptimOptions& opts);

ArResult minimize_over_gamma(const MomentModel& model, const VectorXd& beta0, const KernelSpec& kernel,
                             const OptimOptions& opts = {});

std::pair<ParamPoint, double> cue_full_estimate(const MomentModel& model, const KernelSpec& kernel,
                                                const OptimOptions& opts = {});

}  // namespace subsetar
