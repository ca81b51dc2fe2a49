#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfest/estimator.hpp"

namespace mfest {

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds{"sensitivity_MN", "sensitivity_J", "rate_fit",
                                              "mle_compare",    "joint_sigma",   "clt",
                                              "bistable",       "nonsymmetric",  "chaos_check"};
  return kinds;
}

/// Parsed experiment configuration. `echo` is the full configuration with
/// defaults filled in; it is written at the top of every output table.
struct ExperimentConfig {
  std::string name;
  std::string experiment;
  std::string note;

  ConfiningPotential confining = ConfiningPotential::quadratic();
  InteractionPotential interaction = InteractionPotential::quadratic();
  Theta theta0{{1.0}, {0.5}, 1.0};

  std::vector<std::string> estimate{"kappa"};
  std::vector<double> init;
  Bounds bounds;
  /// One exponent list (used for every j) or one list per j.
  std::vector<std::vector<int>> psi{{1}};
  std::size_t J = 1;
  int basis_degree = 10;
  MomentPolicy moment_policy = MomentPolicy::self_consistent;
  /// "newton" or "closed_form" (quadratic Curie-Weiss model with J = 1, psi = x only).
  std::string estimator = "newton";

  std::size_t N = 250;
  std::size_t M = 1000;
  double delta = 1.0;
  double step = 0.01;
  double burn_in = 0.0;
  double initial_value = 0.0;
  std::size_t L = 5;
  std::uint64_t seed = 1;

  std::vector<std::size_t> grid_M;
  std::vector<std::size_t> grid_N;
  std::vector<std::size_t> grid_J;
  std::vector<double> grid_delta;

  double chaos_time = 10.0;
  std::size_t chaos_repeats = 10;
  std::size_t histogram_bins = 40;

  nlohmann::json echo;

  static ExperimentConfig from_json(const nlohmann::json& j, std::string name);
  static ExperimentConfig load(const std::filesystem::path& file);
  void validate() const;
  PsiSpec psi_for(std::size_t J) const;
  EstimatingContext context(std::size_t J) const;
};

struct Check {
  std::string name;
  double value = 0.0;
  std::string target;
  bool pass = false;
};

/// Rows of string cells (numbers already formatted) under named columns.
struct ResultTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row);
};

struct ExperimentResult {
  std::string name;
  std::string experiment;
  ResultTable table;
  /// Experiment-specific numbers (slopes, moments, per-point means).
  nlohmann::json summary = nlohmann::json::object();
  std::vector<Check> checks;
  std::size_t failed_points = 0;
  std::size_t failed_estimates = 0;
};

struct RunOptions {
  std::size_t threads = 1;
};

ExperimentResult run_sensitivity(const ExperimentConfig& cfg, const RunOptions& opts = {});
ExperimentResult run_rate_fit(const ExperimentConfig& cfg, const RunOptions& opts = {});
ExperimentResult run_mle_compare(const ExperimentConfig& cfg, const RunOptions& opts = {});
ExperimentResult run_joint_sigma(const ExperimentConfig& cfg, const RunOptions& opts = {});
ExperimentResult run_clt(const ExperimentConfig& cfg, const RunOptions& opts = {});
ExperimentResult run_bistable(const ExperimentConfig& cfg, const RunOptions& opts = {});
ExperimentResult run_nonsymmetric(const ExperimentConfig& cfg, const RunOptions& opts = {});
ExperimentResult run_chaos_check(const ExperimentConfig& cfg, const RunOptions& opts = {});
/// Dispatches on cfg.experiment.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// Least-squares slope of log y against log x; needs at least `min_points`
/// points, all positive.
double loglog_slope(std::span<const double> x, std::span<const double> y, std::size_t min_points = 2);

/// Comment lines echoing the configuration, then the CSV header and rows.
void write_table_csv(std::ostream& os, const ExperimentConfig& cfg, const ResultTable& table);
nlohmann::json summary_json(const ExperimentConfig& cfg, const ExperimentResult& result, double wall_seconds);
/// Writes <dir>/<name>.csv and <dir>/<name>.json; returns the two paths.
std::vector<std::filesystem::path> write_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                                                 const ExperimentResult& result, double wall_seconds);

/// Checked-in presets (file stems under the preset directory).
std::vector<std::string> list_presets(const std::filesystem::path& dir);
/// A preset name or a path to a JSON file.
std::filesystem::path resolve_config(const std::string& preset_or_path, const std::filesystem::path& preset_dir);
std::filesystem::path default_preset_dir();

}  // namespace mfest
