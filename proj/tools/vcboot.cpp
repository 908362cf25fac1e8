#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vcboot/bootstrap.hpp"
#include "vcboot/csv.hpp"
#include "vcboot/fit.hpp"
#include "vcboot/mean_functions.hpp"
#include "vcboot/rng.hpp"
#include "vcboot/simstudy.hpp"

namespace {

constexpr const char* kVersion = "vcboot 0.1.0";

using vcboot::ConfigError;

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Flat key = value model configs
// ---------------------------------------------------------------------------

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::map<std::string, std::string> parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::map<std::string, std::string> values;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      std::ostringstream msg;
      msg << "config line " << line_no << ": expected 'key = value'";
      throw ConfigError(msg.str());
    }
    values[trim(stripped.substr(0, eq))] = trim(stripped.substr(eq + 1));
  }
  return values;
}

std::vector<int> parse_int_list(const std::string& text, const char* what) {
  std::vector<int> out;
  std::istringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError(std::string(what) + ": cannot parse '" + tok + "'");
    }
  }
  return out;
}

struct ModelSetup {
  vcboot::ModelSpec model;
  vcboot::QuadratureConfig quad;
  vcboot::FitOptions fit;
};

ModelSetup build_model(const std::map<std::string, std::string>& config) {
  ModelSetup setup;
  auto get = [&](const char* key) -> const std::string* {
    const auto it = config.find(key);
    return it == config.end() ? nullptr : &it->second;
  };
  const std::string* mean = get("mean");
  if (!mean) throw ConfigError("config: missing key 'mean'");
  if (*mean == "linear") {
    const std::string* s_cols = get("s_cols");
    if (!s_cols) throw ConfigError("config: linear mean needs 's_cols'");
    const std::string* beta_cols = get("beta_cols");
    setup.model = vcboot::linear_model(
        beta_cols ? parse_int_list(*beta_cols, "beta_cols")
                  : std::vector<int>{},
        parse_int_list(*s_cols, "s_cols"));
  } else if (*mean == "logistic") {
    const std::string* t_col = get("t_col");
    setup.model = vcboot::logistic_model(
        t_col ? std::stoi(*t_col) : 1);
  } else {
    throw ConfigError("config: mean must be 'linear' or 'logistic', not '" +
                      *mean + "'");
  }
  if (const std::string* v = get("n_nodes")) setup.quad.n_nodes = std::stoi(*v);
  if (const std::string* v = get("adaptive")) {
    if (*v != "true" && *v != "false") {
      throw ConfigError("config: adaptive must be true or false");
    }
    setup.quad.adaptive = *v == "true";
  }
  if (const std::string* v = get("structure")) {
    if (*v == "diagonal") {
      setup.fit.structure = vcboot::LambdaStructure::diagonal;
    } else if (*v == "triangular") {
      setup.fit.structure = vcboot::LambdaStructure::lower_triangular;
    } else {
      throw ConfigError("config: structure must be diagonal or triangular");
    }
  }
  if (const std::string* v = get("n_starts")) setup.fit.n_starts = std::stoi(*v);
  if (const std::string* v = get("max_evals")) {
    setup.fit.max_evals = std::stoi(*v);
  }
  for (const auto& [key, value] : config) {
    static const std::vector<std::string> known = {
        "mean",     "beta_cols", "s_cols",   "t_col",
        "n_nodes",  "adaptive",  "structure", "n_starts",
        "max_evals"};
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  return setup;
}

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

std::uint64_t fnv1a(std::uint64_t hash, const std::string& bytes) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

std::string hash_inputs(const std::vector<std::string>& paths,
                        const std::string& extra) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (const std::string& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("manifest: cannot read '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    hash = fnv1a(hash, buffer.str());
  }
  hash = fnv1a(hash, extra);
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(hash));
  return buf;
}

void write_manifest(const std::string& out_path, const std::string& command,
                    const std::string& config_path, std::uint64_t seed,
                    const std::vector<std::string>& input_files,
                    const std::string& extra_input) {
  nlohmann::json manifest;
  manifest["command"] = command;
  manifest["config"] = config_path;
  manifest["seed"] = seed;
  manifest["version"] = kVersion;
  manifest["input_hash"] = hash_inputs(input_files, extra_input);
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  manifest["timestamp"] = stamp;
  std::ofstream out(out_path + ".manifest.json");
  if (!out) {
    throw ConfigError("manifest: cannot write '" + out_path +
                      ".manifest.json'");
  }
  out << manifest.dump(2) << "\n";
}

// Report text goes to stdout and, when --out is given, to the file the
// manifest accompanies.
void deliver(const std::string& report, const std::string& out_path,
             const std::string& command, const std::string& config_path,
             std::uint64_t seed, const std::vector<std::string>& inputs,
             const std::string& extra_input) {
  std::cout << report;
  if (out_path.empty()) return;
  std::ofstream out(out_path);
  if (!out) throw ConfigError("cannot write '" + out_path + "'");
  out << report;
  write_manifest(out_path, command, config_path, seed, inputs, extra_input);
}

std::string join_command(int argc, char** argv) {
  std::string cmd;
  for (int i = 0; i < argc; ++i) {
    if (i) cmd += ' ';
    cmd += argv[i];
  }
  return cmd;
}

// ---------------------------------------------------------------------------
// Report formatting
// ---------------------------------------------------------------------------

void print_theta(std::ostream& out, const vcboot::Theta& theta,
                 const std::string& indent) {
  out << indent << "beta:";
  for (Eigen::Index k = 0; k < theta.beta.size(); ++k) {
    out << " " << format_number(theta.beta[k]);
  }
  out << "\n" << indent << "lambda:\n";
  for (Eigen::Index i = 0; i < theta.lambda.rows(); ++i) {
    out << indent << " ";
    for (Eigen::Index j = 0; j < theta.lambda.cols(); ++j) {
      out << " " << format_number(theta.lambda(i, j));
    }
    out << "\n";
  }
  out << indent << "sigma2: " << format_number(theta.sigma2) << "\n";
}

std::string format_rows(const std::vector<int>& rows) {
  std::string out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(rows[i]);
  }
  return out;
}

void print_test_block(std::ostream& out, const vcboot::BootstrapResult& r,
                      double c_n, bool with_asym) {
  out << "  c_n: " << format_number(c_n) << "\n";
  out << "  p_boot: " << format_number(r.p_boot) << "\n";
  if (with_asym) {
    out << "  p_asym: " << format_number(vcboot::asymptotic_pvalue_single(
               r.lrt_obs))
        << "\n";
  }
  out << "  replicates failed: " << r.b_failed
      << (r.reliable ? "" : " (unreliable)") << "\n";
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct CommonArgs {
  std::string data_path;
  std::string model_path;
  std::string out_path;
  std::uint64_t seed = 0;
  int workers = 1;
};

int cmd_fit(const CommonArgs& args, const std::vector<int>& tested_rows,
            const std::string& command) {
  const vcboot::Dataset data = vcboot::read_dataset_csv_file(args.data_path);
  ModelSetup setup = build_model(parse_config(args.model_path));
  setup.fit.seed = args.seed;

  vcboot::FitResult fit;
  if (tested_rows.empty()) {
    fit = vcboot::mle_full(setup.model, data, setup.quad, setup.fit);
  } else {
    vcboot::TestSpec spec;
    spec.tested_rows = tested_rows;
    fit = vcboot::mle_null(setup.model, data, spec, setup.quad, setup.fit);
  }

  std::ostringstream report;
  report << "model: " << setup.model.name << "\n";
  report << "individuals: " << data.n_individuals() << "\n";
  report << "observations: " << data.n_obs() << "\n";
  if (!tested_rows.empty()) {
    report << "rows held at zero: " << format_rows(tested_rows) << "\n";
  }
  report << "converged: " << (fit.converged ? "yes" : "no") << "\n";
  report << "loglik: " << format_number(fit.loglik) << "\n";
  report << "evaluations: " << fit.n_evals << "\n";
  print_theta(report, fit.theta_hat, "");
  deliver(report.str(), args.out_path, command, args.model_path, args.seed,
          {args.data_path, args.model_path}, "");
  return 0;
}

double resolve_threshold(const std::string& text, int n_individuals) {
  if (text == "auto") return vcboot::default_shrink(n_individuals);
  try {
    std::size_t used = 0;
    const double c = std::stod(text, &used);
    if (used != text.size() || c < 0.0) throw std::invalid_argument(text);
    return c;
  } catch (const std::exception&) {
    throw ConfigError("--c-n must be 'auto' or a nonnegative number, not '" +
                      text + "'");
  }
}

int cmd_test(const CommonArgs& args, const std::vector<int>& tested_rows,
             int n_replicates, const std::string& c_n_text, bool shrink_psi,
             double alpha, const std::string& plan,
             const std::string& command) {
  const vcboot::Dataset data = vcboot::read_dataset_csv_file(args.data_path);
  ModelSetup setup = build_model(parse_config(args.model_path));
  setup.fit.seed = vcboot::mix_seed(args.seed, 0xF1u);
  if (tested_rows.empty()) {
    throw ConfigError("test: --tested-rows is required");
  }

  const double c_n = resolve_threshold(c_n_text, data.n_individuals());
  vcboot::BootstrapOptions boot;
  boot.n_replicates = n_replicates;
  boot.workers = args.workers;

  std::ostringstream report;
  report << "model: " << setup.model.name << "\n";
  report << "individuals: " << data.n_individuals() << "\n";
  report << "B: " << n_replicates << "\n";
  report << "alpha: " << format_number(alpha) << "\n";

  auto run_arm = [&](const std::vector<int>& rows, double threshold,
                     std::uint64_t boot_seed,
                     const vcboot::FitPair& observed) {
    vcboot::TestSpec spec;
    spec.tested_rows = rows;
    vcboot::ShrinkPolicy policy;
    policy.c_n = threshold;
    policy.shrink_fixed_effects = shrink_psi;
    vcboot::BootstrapOptions arm_boot = boot;
    arm_boot.seed = boot_seed;
    return vcboot::bootstrap_test(setup.model, data, spec, setup.quad,
                                  setup.fit, policy, arm_boot, observed);
  };
  auto observed_pair = [&](const std::vector<int>& rows) {
    vcboot::TestSpec spec;
    spec.tested_rows = rows;
    return vcboot::fit_lrt_pair(setup.model, data, spec, setup.quad,
                                setup.fit);
  };

  if (plan == "single") {
    const vcboot::FitPair observed = observed_pair(tested_rows);
    const vcboot::BootstrapResult r =
        run_arm(tested_rows, c_n, vcboot::mix_seed(args.seed, 1), observed);
    report << "tested rows: " << format_rows(tested_rows) << "\n";
    report << "lrt_obs: " << format_number(r.lrt_obs) << "\n";
    print_test_block(report, r, c_n, tested_rows.size() == 1);
    report << "decision at alpha: "
           << (r.p_boot < alpha ? "reject" : "no rejection") << "\n";
    report << "theta_star:\n";
    print_theta(report, r.theta_star, "  ");
  } else if (plan == "sequential") {
    if (tested_rows.size() != 2) {
      throw ConfigError("test: --plan sequential expects exactly two tested "
                        "rows (joint first, then each alone)");
    }
    // T1: both rows at once, plain bootstrap.
    const vcboot::FitPair obs1 = observed_pair(tested_rows);
    const vcboot::BootstrapResult t1 =
        run_arm(tested_rows, 0.0, vcboot::mix_seed(args.seed, 1), obs1);
    report << "T1: tested rows " << format_rows(tested_rows) << " jointly\n";
    report << "  lrt_obs: " << format_number(t1.lrt_obs) << "\n";
    print_test_block(report, t1, 0.0, false);

    // T2 and T3: one row each, the other free to shrink; both arms share
    // the observed fits and the replicate seed stream.
    const std::vector<std::vector<int>> singles = {{tested_rows[1]},
                                                   {tested_rows[0]}};
    for (std::size_t t = 0; t < singles.size(); ++t) {
      const std::vector<int>& rows = singles[t];
      const int nuisance = t == 0 ? tested_rows[0] : tested_rows[1];
      const std::uint64_t boot_seed = vcboot::mix_seed(args.seed, 2 + t);
      const vcboot::FitPair obs = observed_pair(rows);
      const vcboot::BootstrapResult shrunk =
          run_arm(rows, c_n, boot_seed, obs);
      const vcboot::BootstrapResult plain =
          run_arm(rows, 0.0, boot_seed, obs);
      report << "T" << (t + 2) << ": tested row " << rows[0]
             << " (row " << nuisance << " shrinkable)\n";
      report << "  lrt_obs: " << format_number(shrunk.lrt_obs) << "\n";
      report << " with shrinkage:\n";
      print_test_block(report, shrunk, c_n, true);
      report << " without shrinkage:\n";
      print_test_block(report, plain, 0.0, true);
    }
  } else {
    throw ConfigError("--plan must be 'single' or 'sequential', not '" +
                      plan + "'");
  }

  deliver(report.str(), args.out_path, command, args.model_path, args.seed,
          {args.data_path, args.model_path}, "");
  return 0;
}

int cmd_simulate(const std::string& scenario_name, int n_individuals, int K,
                 int B, const std::vector<int>& s_values,
                 const std::vector<double>& c_values,
                 const std::vector<double>& alphas,
                 const std::vector<std::string>& power_tokens,
                 const CommonArgs& args, const std::string& command) {
  vcboot::ScenarioConfig config =
      vcboot::build_scenario(vcboot::parse_model_id(scenario_name));
  if (n_individuals > 0) {
    config.n_individuals = n_individuals;
    if (!config.fixed_designs.empty()) {
      config.fixed_designs.assign(n_individuals, config.fixed_designs[0]);
    }
  }
  if (K > 0) config.n_outer = K;
  if (B > 0) config.n_boot = B;
  if (!alphas.empty()) config.alpha_levels = alphas;
  if (args.seed != 0) config.seed = args.seed;
  config.workers = args.workers;
  if (!c_values.empty()) {
    config.policies.clear();
    for (double c : c_values) {
      vcboot::ShrinkPolicy policy;
      policy.c_n = c;
      config.policies.push_back(policy);
    }
  }

  const std::string out_path = args.out_path.empty()
                                   ? scenario_name + "_results.csv"
                                   : args.out_path;
  std::ostringstream settings;
  settings << scenario_name << " N=" << config.n_individuals
           << " K=" << config.n_outer << " B=" << config.n_boot
           << " seed=" << config.seed;

  vcboot::ScenarioResult result;
  bool power_columns = false;
  if (!power_tokens.empty()) {
    std::vector<std::pair<double, double>> grid;
    for (const std::string& token : power_tokens) {
      const auto colon = token.find(':');
      try {
        const double value = std::stod(token.substr(0, colon));
        const double rho =
            colon == std::string::npos ? 0.0 : std::stod(token.substr(colon + 1));
        grid.emplace_back(value, rho);
      } catch (const std::exception&) {
        throw ConfigError("--power: cannot parse '" + token +
                          "' (expected value or value:rho)");
      }
    }
    result = vcboot::empirical_power(config, grid);
    power_columns = true;
  } else if (!s_values.empty()) {
    result = vcboot::nuisance_sweep(
        config, s_values,
        c_values.empty() ? std::vector<double>{config.policies[0].c_n}
                         : c_values);
  } else {
    result = vcboot::empirical_level(config);
  }

  vcboot::write_scenario_csv_file(out_path, result, power_columns);
  write_manifest(out_path, command, "", config.seed, {}, settings.str());
  std::cout << "wrote " << result.rows.size() << " rows to " << out_path
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variance-component testing for mixed-effects models"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  CommonArgs args;
  std::vector<int> tested_rows;
  int n_replicates = 200;
  std::string c_n_text = "auto";
  bool shrink_psi = false;
  double alpha = 0.05;
  std::string plan = "single";

  CLI::App* fit = app.add_subcommand("fit", "Fit the model by maximum "
                                            "marginal likelihood");
  fit->add_option("--data", args.data_path, "Dataset CSV")->required();
  fit->add_option("--model", args.model_path, "Model config file")->required();
  fit->add_option("--tested-rows", tested_rows,
                  "Hold these lambda rows at zero (fits the null model)")
      ->delimiter(',');
  fit->add_option("--seed", args.seed, "RNG seed");
  fit->add_option("--out", args.out_path, "Write the report here");

  CLI::App* test = app.add_subcommand("test", "Bootstrap test that variance "
                                              "components are zero");
  test->add_option("--data", args.data_path, "Dataset CSV")->required();
  test->add_option("--model", args.model_path, "Model config file")
      ->required();
  test->add_option("--tested-rows", tested_rows,
                   "1-based lambda rows under test")
      ->delimiter(',')
      ->required();
  test->add_option("--B", n_replicates, "Bootstrap replicates");
  test->add_option("--c-n", c_n_text, "Shrinkage threshold, or 'auto'");
  test->add_flag("--shrink-psi", shrink_psi,
                 "Threshold small fixed effects too");
  test->add_option("--seed", args.seed, "RNG seed");
  test->add_option("--workers", args.workers, "Worker threads");
  test->add_option("--alpha", alpha, "Level for the printed decision");
  test->add_option("--plan", plan, "single | sequential");
  test->add_option("--out", args.out_path, "Write the report here");

  int sim_N = 0;
  int sim_K = 0;
  int sim_B = 0;
  std::string scenario_name;
  std::vector<int> s_values;
  std::vector<double> c_values;
  std::vector<double> alphas;
  std::vector<std::string> power_tokens;
  CLI::App* simulate = app.add_subcommand(
      "simulate", "Run a built-in simulation scenario");
  simulate->add_option("scenario", scenario_name, "m1 | m2 | m3 | m4")
      ->required();
  simulate->add_option("--N", sim_N, "Individuals per dataset");
  simulate->add_option("--K", sim_K, "Outer replicates");
  simulate->add_option("--B", sim_B, "Bootstrap replicates");
  simulate->add_option("--s", s_values, "Nuisance counts to sweep")
      ->delimiter(',');
  simulate->add_option("--c", c_values, "Shrinkage thresholds")
      ->delimiter(',');
  simulate->add_option("--alpha", alphas, "Levels")->delimiter(',');
  simulate->add_option("--power", power_tokens,
                       "Power grid of value or value:rho pairs")
      ->delimiter(',');
  simulate->add_option("--seed", args.seed, "RNG seed");
  simulate->add_option("--workers", args.workers, "Worker threads");
  simulate->add_option("--out", args.out_path, "Results CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::string command = join_command(argc, argv);
  try {
    if (fit->parsed()) return cmd_fit(args, tested_rows, command);
    if (test->parsed()) {
      return cmd_test(args, tested_rows, n_replicates, c_n_text, shrink_psi,
                      alpha, plan, command);
    }
    return cmd_simulate(scenario_name, sim_N, sim_K, sim_B, s_values,
                        c_values, alphas, power_tokens, args, command);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const vcboot::EstimationError& e) {
    std::cerr << "estimation failed: " << e.what() << "\n";
    return 2;
  } catch (const vcboot::EvalError& e) {
    std::cerr << "evaluation failed: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
