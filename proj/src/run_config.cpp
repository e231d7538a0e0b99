#include "subsetar/run_config.hpp"

#include "subsetar/dataset.hpp"
#include "subsetar/errors.hpp"
#include "subsetar/inference.hpp"
#include "subsetar/simulation.hpp"
#include "subsetar/theory_diag.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace subsetar {

namespace {

constexpr const char* kVersion = "0.2.0";

std::vector<double> parse_double_list(const std::string& spec) {
  std::vector<double> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  return out;
}

std::vector<long> parse_long_list(const std::string& spec) {
  std::vector<long> out;
  for (double v : parse_double_list(spec)) out.push_back(static_cast<long>(v));
  return out;
}

// "lo:hi:steps"
VectorXd parse_grid(const std::string& spec) {
  double lo = 0.0, hi = 0.0;
  long steps = 0;
  char c1 = 0, c2 = 0;
  std::stringstream ss(spec);
  if (!(ss >> lo >> c1 >> hi >> c2 >> steps) || c1 != ':' || c2 != ':')
    throw UsageError("bad grid specification '" + spec + "', expected lo:hi:steps");
  if (steps < 2) throw UsageError("grid needs at least 2 points");
  if (!(lo < hi)) throw UsageError("grid requires lo < hi");
  VectorXd grid(steps);
  for (long i = 0; i < steps; ++i) grid(i) = lo + (hi - lo) * i / (steps - 1);
  return grid;
}

InstrumentSet parse_instruments(const std::string& name) {
  if (name == "lags3") return InstrumentSet::Lags3;
  if (name == "xlags") return InstrumentSet::XLags;
  if (name == "xlags-text") return InstrumentSet::XLagsText;
  throw UsageError("unknown instrument set '" + name + "'");
}

KernelKind parse_kernel(const std::string& name) {
  if (name == "bartlett") return KernelKind::Bartlett;
  if (name == "parzen") return KernelKind::Parzen;
  if (name == "qs") return KernelKind::QuadraticSpectral;
  if (name == "trunc0") return KernelKind::TruncationZero;
  throw UsageError("unknown kernel '" + name + "'");
}

}  // namespace

OptimOptions RunConfig::optim() const {
  OptimOptions opts;
  opts.tol_grad = tol_grad;
  opts.max_iters = max_iters;
  opts.n_starts = n_starts;
  opts.box_lo = gamma_box_lo;
  opts.box_hi = gamma_box_hi;
  opts.prescan_points = prescan_points;
  return opts;
}

KernelSpec RunConfig::kernel_spec() const { return KernelSpec{parse_kernel(kernel), bandwidth}; }

RunConfig parse_config(const std::vector<std::string>& args) {
  RunConfig config;
  CLI::App app{"identification-robust subset inference for nonlinear GMM"};
  app.set_config("--config", "", "configuration file (ini format); command-line flags win");

  app.add_option("--threads", config.threads, "worker cap for replication-parallel commands");
  app.add_option("--seed", config.seed, "master seed; all randomness derives from it");
  app.add_option("--out", config.out_path, "output CSV path");

  auto add_model_opts = [&](CLI::App* cmd, bool need_data) {
    auto* data = cmd->add_option("--data", config.data_path, "input CSV (header row required)");
    if (need_data) data->required();
    cmd->add_option("--model", config.model, "linear-iv | nkpc | local-projection")
        ->check(CLI::IsMember({"linear-iv", "nkpc", "local-projection"}));
    cmd->add_option("--y", config.y_col, "outcome column (inflation series for nkpc)");
    cmd->add_option("--x", config.x_col, "policy/endogenous column (output gap for nkpc)");
    cmd->add_option("--w", config.w_cols, "control columns")->delimiter(',');
    cmd->add_option("--z", config.z_cols, "instrument columns")->delimiter(',');
    cmd->add_option("--instruments", config.instruments, "nkpc instrument set")
        ->check(CLI::IsMember({"lags3", "xlags", "xlags-text"}));
    cmd->add_option("--horizon", config.horizon, "local projection horizon H");
  };
  auto add_kernel_opts = [&](CLI::App* cmd) {
    cmd->add_option("--kernel", config.kernel, "bartlett | parzen | qs | trunc0")
        ->check(CLI::IsMember({"bartlett", "parzen", "qs", "trunc0"}));
    cmd->add_option("--bandwidth", config.bandwidth, "HAC bandwidth (<=0: automatic rule)");
  };
  auto add_optim_opts = [&](CLI::App* cmd) {
    cmd->add_option("--tol-grad", config.tol_grad, "gradient tolerance scale");
    cmd->add_option("--max-iters", config.max_iters, "iteration cap per start");
    cmd->add_option("--n-starts", config.n_starts, "multi-start schedule size");
    cmd->add_option("--gamma-box", [&config](const std::vector<std::string>& vals) {
      double lo, hi; char c;
      std::stringstream ss(vals.back());
      if (!(ss >> lo >> c >> hi) || c != ':' || !(lo < hi)) return false;
      config.gamma_box_lo = lo;
      config.gamma_box_hi = hi;
      return true;
    }, "nuisance box lo:hi");
    cmd->add_option("--prescan", config.prescan_points, "scan points for 1-d searches");
  };
  auto add_cell_opts = [&](CLI::App* cmd) {
    cmd->add_option("--T", config.T, "series length");
    cmd->add_option("--rho2", config.rho2, "second autoregressive coefficient");
    cmd->add_option("--rho-eta-nu", config.rho_eta_nu, "shock correlation");
    cmd->add_option("--null", config.gamma_f_null, "tested gamma_f value");
    cmd->add_option("--vol-xi-var", config.vol_xi_var,
                    "log-volatility innovation variance (0 = homoskedastic)")
        ->trigger_on_parse()
        ->each([&config](const std::string&) { config.vol_xi_var_set = true; });
    cmd->add_option("--instruments", config.instruments, "instrument set")
        ->check(CLI::IsMember({"lags3", "xlags", "xlags-text"}));
    cmd->add_option("--reps", config.reps, "replications per cell");
    cmd->add_option("--alpha", config.alpha, "significance level");
  };

  auto* test_cmd = app.add_subcommand("test", "hypothesis test at one or more null values");
  add_model_opts(test_cmd, true);
  add_kernel_opts(test_cmd);
  add_optim_opts(test_cmd);
  test_cmd->add_option("--null", config.null_values, "null value(s) for beta")
      ->required()
      ->delimiter(',');
  test_cmd->add_option("--alpha", config.alpha, "significance level");
  test_cmd->add_option("--test", config.test_name, "ar | klm | t | all")
      ->check(CLI::IsMember({"ar", "klm", "t", "all"}));
  test_cmd->add_option("--component", config.component, "theta component for the t test");

  auto* ci_cmd = app.add_subcommand("ci", "confidence set by test inversion over a grid");
  add_model_opts(ci_cmd, true);
  add_kernel_opts(ci_cmd);
  add_optim_opts(ci_cmd);
  ci_cmd->add_option("--grid", config.grid_spec, "beta grid lo:hi:steps")->required();
  ci_cmd->add_option("--alpha", config.alpha, "significance level");

  auto* proj_cmd = app.add_subcommand("project-ci", "projection interval for one beta component");
  add_model_opts(proj_cmd, true);
  add_kernel_opts(proj_cmd);
  add_optim_opts(proj_cmd);
  proj_cmd->add_option("--component", config.component, "beta component index")->required();
  proj_cmd->add_option("--alpha", config.alpha, "significance level");

  auto* diag_cmd = app.add_subcommand("diagnose", "first-order-condition diagnostics at a known truth");
  add_kernel_opts(diag_cmd);
  add_optim_opts(diag_cmd);
  add_cell_opts(diag_cmd);
  diag_cmd->add_option("--n-list", config.n_list, "comma-separated sample sizes");
  diag_cmd->add_option("--eps", config.eps, "truncation threshold (<=0: relative default)");

  auto* size_cmd = app.add_subcommand("mc-size", "size experiment over design cells");
  add_kernel_opts(size_cmd);
  add_optim_opts(size_cmd);
  add_cell_opts(size_cmd);
  size_cmd->add_option("--cells", config.cells_path, "JSON cell list");
  size_cmd->add_option("--preset", config.preset, "table1 | table2 | grid1 | grid2")
      ->check(CLI::IsMember({"table1", "table2", "grid1", "grid2"}));

  auto* power_cmd = app.add_subcommand("mc-power", "power curve over true gamma_f values");
  add_kernel_opts(power_cmd);
  add_optim_opts(power_cmd);
  add_cell_opts(power_cmd);
  power_cmd->add_option("--power-grid", config.power_grid, "true gamma_f grid lo:hi:steps");

  app.require_subcommand(1);
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }
  for (auto* sub : {test_cmd, ci_cmd, proj_cmd, diag_cmd, size_cmd, power_cmd})
    if (sub->parsed()) config.command = sub->get_name();

  // collect every remaining violation in one message
  std::vector<std::string> problems;
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) problems.push_back("--alpha must be in (0,1)");
  if (config.threads < 1) problems.push_back("--threads must be >= 1");
  if (config.reps < 0) problems.push_back("--reps must be >= 0");
  if (config.model == "linear-iv" || config.model == "local-projection") {
    if ((config.command == "test" || config.command == "ci" || config.command == "project-ci")) {
      if (config.w_cols.empty()) problems.push_back("--w is required for model " + config.model);
      if (config.z_cols.empty()) problems.push_back("--z is required for model " + config.model);
    }
  }
  if (config.command == "mc-size" && !config.cells_path.empty() && !config.preset.empty())
    problems.push_back("--cells and --preset conflict; pass one of them");
  auto check_grid = [&](const std::string& spec, const char* flag) {
    try {
      parse_grid(spec);
    } catch (const UsageError& e) {
      problems.push_back(std::string(flag) + ": " + e.what());
    }
  };
  if (config.command == "ci") check_grid(config.grid_spec, "--grid");
  if (config.command == "mc-power") check_grid(config.power_grid, "--power-grid");
  if (config.command == "diagnose") {
    try {
      if (parse_long_list(config.n_list).empty()) problems.push_back("--n-list is empty");
    } catch (const std::exception&) {
      problems.push_back("--n-list: bad list '" + config.n_list + "'");
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw UsageError(msg);
  }
  return config;
}

namespace {

std::unique_ptr<MomentModel> build_model(const RunConfig& config, const Dataset& data) {
  if (config.model == "nkpc")
    return make_nkpc_model(data, config.y_col, config.x_col, parse_instruments(config.instruments));
  if (config.model == "linear-iv")
    return make_linear_iv_model(data, config.y_col, config.x_col, config.w_cols, config.z_cols);
  return make_local_projection_model(data, config.y_col, config.x_col, config.w_cols, config.z_cols,
                                     config.horizon);
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << content;
}

void write_metadata(const RunConfig& config, const std::vector<std::string>& outputs) {
  nlohmann::json meta;
  meta["version"] = kVersion;
  meta["command"] = config.command;
  meta["model"] = config.model;
  meta["kernel"] = config.kernel;
  meta["bandwidth"] = config.bandwidth;
  meta["bandwidth_rule"] =
      config.kernel == "trunc0" ? "none"
      : (config.bandwidth > 0.0 ? "user" : "floor(4*(n/100)^(2/9))");
  meta["alpha"] = config.alpha;
  meta["seed"] = config.seed;
  meta["threads"] = config.threads;
  meta["instrument_set"] = config.instruments;
  meta["vol_xi_var"] = config.vol_xi_var;
  meta["eps_rule"] = config.eps > 0.0 ? "user" : "1e-3*max(top eigenvalue,1)";
  meta["optimizer"] = {{"tol_grad", config.tol_grad},
                       {"max_iters", config.max_iters},
                       {"n_starts", config.n_starts},
                       {"gamma_box", {config.gamma_box_lo, config.gamma_box_hi}},
                       {"prescan", config.prescan_points}};
  meta["data"] = config.data_path;
  meta["outputs"] = outputs;
  if (config.command == "test") meta["null"] = config.null_values;
  if (config.command == "mc-size" || config.command == "mc-power" || config.command == "diagnose") {
    meta["design"] = {{"T", config.T},
                      {"rho2", config.rho2},
                      {"rho_eta_nu", config.rho_eta_nu},
                      {"gamma_f_null", config.gamma_f_null},
                      {"reps", config.reps}};
  }
  write_file(config.out_path + ".meta.jsonl", meta.dump() + "\n");
}

std::string bool_cell(bool v) { return v ? "1" : "0"; }

std::string test_row(double beta0, const TestResult& r) {
  std::ostringstream row;
  row << to_string(r.name) << "," << format_g6(beta0) << "," << format_g6(r.stat) << "," << r.df
      << "," << format_g6(r.crit) << "," << format_g6(r.pvalue) << "," << bool_cell(r.reject) << ","
      << bool_cell(r.converged);
  return row.str();
}

int run_test(const RunConfig& config) {
  const Dataset data = read_csv(config.data_path);
  const auto model = build_model(config, data);
  const KernelSpec kernel = config.kernel_spec();
  const OptimOptions opts = config.optim();

  std::ostringstream csv;
  csv << "test,beta0,stat,df,crit,pvalue,reject,converged\n";
  for (const double b0 : config.null_values) {
    const VectorXd beta0 = VectorXd::Constant(model->d_beta(), b0);
    if (config.test_name == "ar" || config.test_name == "all")
      csv << test_row(b0, ar_test(*model, beta0, kernel, config.alpha, opts)) << "\n";
    if (config.test_name == "klm" || config.test_name == "all")
      csv << test_row(b0, klm_test(*model, beta0, kernel, config.alpha, opts)) << "\n";
    if (config.test_name == "t" || config.test_name == "all")
      csv << test_row(b0, wald_t_test(*model, config.component, b0, kernel, config.alpha)) << "\n";
  }
  write_file(config.out_path, csv.str());
  write_metadata(config, {config.out_path});
  std::cout << csv.str();
  return 0;
}

int run_ci(const RunConfig& config) {
  const Dataset data = read_csv(config.data_path);
  const auto model = build_model(config, data);
  const ConfidenceSet ci =
      invert_ar_ci(*model, config.kernel_spec(), config.alpha, parse_grid(config.grid_spec),
                   config.optim());

  std::ostringstream csv;
  csv << "beta0,stat,df,crit,pvalue,reject,converged\n";
  for (Eigen::Index i = 0; i < ci.grid.size(); ++i) {
    const TestResult& r = ci.results[static_cast<size_t>(i)];
    csv << format_g6(ci.grid(i)) << "," << format_g6(r.stat) << "," << r.df << ","
        << format_g6(r.crit) << "," << format_g6(r.pvalue) << "," << bool_cell(r.reject) << ","
        << bool_cell(r.converged) << "\n";
  }
  write_file(config.out_path, csv.str());
  write_metadata(config, {config.out_path});
  if (ci.empty) {
    std::cout << "confidence set: empty\n";
  } else {
    std::cout << "confidence set: [" << format_g6(ci.lower) << ", " << format_g6(ci.upper) << "]"
              << (ci.convex ? "" : " (non-convex acceptance region, hull reported)") << "\n";
  }
  return 0;
}

int run_project_ci(const RunConfig& config) {
  const Dataset data = read_csv(config.data_path);
  const auto model = build_model(config, data);
  ProjectionSearchOpts search;
  search.optim = config.optim();
  const ProjectionInterval proj =
      project_ci(*model, config.kernel_spec(), config.alpha, config.component, search);

  std::ostringstream csv;
  csv << "component,lower,upper,df,crit,empty\n";
  csv << config.component << "," << format_g6(proj.lower) << "," << format_g6(proj.upper) << ","
      << proj.df << "," << format_g6(proj.crit) << "," << bool_cell(proj.empty) << "\n";
  write_file(config.out_path, csv.str());
  write_metadata(config, {config.out_path});
  std::cout << csv.str();
  return 0;
}

NkpcConfig cell_config(const RunConfig& config) {
  NkpcConfig cell;
  cell.T = config.T;
  cell.rho2 = config.rho2;
  cell.rho_eta_nu = config.rho_eta_nu;
  cell.gamma_f_true = config.gamma_f_null;
  cell.gamma_f_null = config.gamma_f_null;
  cell.instrument_set = parse_instruments(config.instruments);
  cell.seed = config.seed;
  cell.vol_xi_var = config.vol_xi_var;
  return cell;
}

int run_diagnose(const RunConfig& config) {
  const KernelSpec kernel = config.kernel_spec();
  const OptimOptions opts = config.optim();
  const NkpcConfig base = cell_config(config);

  std::ostringstream csv;
  csv << "n,rep,ar_stat,q_at_tilde,m_term,varpi,foc_residual,proj_gap\n";
  for (const long n : parse_long_list(config.n_list)) {
    NkpcConfig design = base;
    design.T = n;
    const NkpcParams params = derive_nkpc_params(design.rho, design.rho2, design.rho_eta_nu,
                                                 design.gamma_f_true, design.vol_xi_var);
    std::vector<std::string> rows(static_cast<size_t>(config.reps));
    parallel_for(config.reps, config.threads, [&](long rep) {
      const Dataset data =
          simulate_nkpc(design, RngStream(design.seed, static_cast<std::uint64_t>(rep)));
      const auto model = make_nkpc_model(data, "pi", "x", design.instrument_set);
      const ParamPoint truth{VectorXd::Constant(1, design.gamma_f_true),
                             VectorXd::Constant(1, params.lambda)};
      const DiagReport r = bound_decomposition(*model, truth, kernel, config.eps, opts);
      std::ostringstream row;
      row << n << "," << rep << "," << format_g6(r.ar_stat) << "," << format_g6(r.q_at_tilde)
          << "," << format_g6(r.m_term) << "," << format_g6(r.varpi) << ","
          << format_g6(r.foc_residual_norm) << "," << format_g6(r.proj_gap);
      rows[static_cast<size_t>(rep)] = row.str();
    });
    for (const auto& row : rows) csv << row << "\n";
  }
  write_file(config.out_path, csv.str());
  write_metadata(config, {config.out_path});
  return 0;
}

std::vector<McCell> preset_cells(const RunConfig& config) {
  const bool table1 = config.preset == "table1" || config.preset == "grid1";
  std::vector<double> rho2_grid = {0.0, -0.05, -0.65};
  if (config.preset == "grid1" || config.preset == "grid2") rho2_grid.push_back(-0.99);
  std::vector<McCell> cells;
  for (const double rho2 : rho2_grid) {
    for (const double rho_en : {0.0, 0.2, 0.99}) {
      McCell cell;
      cell.config = cell_config(config);
      cell.config.rho2 = rho2;
      cell.config.rho_eta_nu = rho_en;
      cell.config.instrument_set = table1 ? InstrumentSet::Lags3 : InstrumentSet::XLags;
      // the published tables correspond to the homoskedastic shocks
      if (!config.vol_xi_var_set) cell.config.vol_xi_var = 0.0;
      cell.reps = config.reps;
      cell.alpha = config.alpha;
      cells.push_back(cell);
    }
  }
  return cells;
}

std::vector<McCell> cells_from_json(const RunConfig& config) {
  std::ifstream in(config.cells_path);
  if (!in) throw UsageError("cannot open cells file '" + config.cells_path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("cells file: " + std::string(e.what()));
  }
  if (!doc.is_array()) throw UsageError("cells file must hold a JSON array");
  std::vector<McCell> cells;
  for (const auto& item : doc) {
    McCell cell;
    cell.config = cell_config(config);
    cell.reps = config.reps;
    cell.alpha = config.alpha;
    for (const auto& [key, value] : item.items()) {
      if (key == "T") cell.config.T = value.get<long>();
      else if (key == "rho2") cell.config.rho2 = value.get<double>();
      else if (key == "rho_eta_nu") cell.config.rho_eta_nu = value.get<double>();
      else if (key == "gamma_f_null") {
        cell.config.gamma_f_null = value.get<double>();
        cell.config.gamma_f_true = value.get<double>();
      } else if (key == "gamma_f_true") cell.config.gamma_f_true = value.get<double>();
      else if (key == "instrument_set") cell.config.instrument_set = parse_instruments(value.get<std::string>());
      else if (key == "vol_xi_var") cell.config.vol_xi_var = value.get<double>();
      else if (key == "seed") cell.config.seed = value.get<std::uint64_t>();
      else if (key == "reps") cell.reps = value.get<long>();
      else if (key == "alpha") cell.alpha = value.get<double>();
      else throw UsageError("cells file: unknown key '" + key + "'");
    }
    cells.push_back(cell);
  }
  return cells;
}

int run_mc_size(const RunConfig& config) {
  std::vector<McCell> cells;
  if (!config.preset.empty()) cells = preset_cells(config);
  else if (!config.cells_path.empty()) cells = cells_from_json(config);
  else cells.push_back([&] {
    McCell cell;
    cell.config = cell_config(config);
    cell.reps = config.reps;
    cell.alpha = config.alpha;
    return cell;
  }());
  const McTable table =
      run_size_experiment(cells, config.kernel_spec(), config.optim(), config.threads);
  write_file(config.out_path, table.to_csv());
  RunConfig effective = config;
  if (!cells.empty()) effective.vol_xi_var = cells.front().config.vol_xi_var;
  write_metadata(effective, {config.out_path});
  std::cout << table.to_csv();
  return 0;
}

int run_mc_power(const RunConfig& config) {
  McCell base;
  base.config = cell_config(config);
  base.reps = config.reps;
  base.alpha = config.alpha;
  const VectorXd grid = parse_grid(config.power_grid);
  std::vector<double> values(grid.data(), grid.data() + grid.size());
  const McTable table =
      run_power_experiment(base, values, config.kernel_spec(), config.optim(), config.threads);
  write_file(config.out_path, table.to_csv());
  write_metadata(config, {config.out_path});
  std::cout << table.to_csv();
  return 0;
}

}  // namespace

int run(const RunConfig& config) {
  if (config.command == "test") return run_test(config);
  if (config.command == "ci") return run_ci(config);
  if (config.command == "project-ci") return run_project_ci(config);
  if (config.command == "diagnose") return run_diagnose(config);
  if (config.command == "mc-size") return run_mc_size(config);
  if (config.command == "mc-power") return run_mc_power(config);
  throw UsageError("no command given");
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  try {
    const RunConfig config = parse_config(args);
    return run(config);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const CsvFormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace subsetar
