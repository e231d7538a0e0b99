#pragma once

#include "subsetar/cue.hpp"
#include "subsetar/errors.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace subsetar {

class UsageError : public Error {
public:
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Fully validated command-line/run configuration. Parsing collects every
// violation before reporting.
struct RunConfig {
  std::string command;  // test | ci | project-ci | diagnose | mc-size | mc-power

  // data and model roles
  std::string data_path;
  std::string model = "nkpc";  // linear-iv | nkpc | local-projection
  std::string y_col = "y";
  std::string x_col = "x";
  std::vector<std::string> w_cols;
  std::vector<std::string> z_cols;
  std::string instruments = "lags3";  // nkpc instrument set
  int horizon = 0;

  // kernel
  std::string kernel = "trunc0";
  double bandwidth = 0.0;  // <= 0 selects the automatic rule

  // testing
  double alpha = 0.05;
  std::vector<double> null_values;
  std::string test_name = "ar";  // ar | klm | t | all
  int component = 0;

  // grids
  std::string grid_spec = "0:1:401";        // ci: lo:hi:steps
  std::string power_grid = "-0.5:1.5:41";   // mc-power: true gamma_f sweep
  std::string n_list = "100,400,1600";      // diagnose sample sizes

  // monte carlo
  long reps = 2000;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string cells_path;
  std::string preset;  // table1 | table2
  long T = 100;
  double rho2 = 0.0;
  double rho_eta_nu = 0.0;
  double gamma_f_null = 0.5;
  double vol_xi_var = 0.2;
  bool vol_xi_var_set = false;

  // diagnostics
  double eps = 0.0;  // <= 0 selects the relative default rule

  // optimizer
  double tol_grad = 1e-8;
  int max_iters = 200;
  int n_starts = 8;
  double gamma_box_lo = -50.0;
  double gamma_box_hi = 50.0;
  int prescan_points = 1024;

  std::string out_path = "out.csv";
  std::string config_file;

  OptimOptions optim() const;
  KernelSpec kernel_spec() const;
};

// Parses argv-style arguments (without the program name); throws UsageError
// listing every violation.
RunConfig parse_config(const std::vector<std::string>& args);

// Executes a parsed run: writes the output CSV(s) plus a JSON-lines
// metadata file next to them. Returns the process exit status (0 success,
// 2 statistical degeneracy).
int run(const RunConfig& config);

// Entry point used by the binary: parse + run with the documented exit
// codes (1 on usage errors).
int run_cli(int argc, const char* const* argv);

}  // namespace subsetar
