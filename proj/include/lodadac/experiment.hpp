#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lodadac/engine.hpp"
#include "lodadac/problems.hpp"

namespace lodadac::experiment {

using nlohmann::json;

/// Exit codes of the command-line tool.
enum ExitCode : int { kOk = 0, kConfigError = 1, kRunFailure = 2, kTheoryFailure = 3 };

struct ProblemConfig {
  problems::Kind kind = problems::Kind::logistic;
  std::size_t d = 10;
  std::size_t samples_per_agent = 100;
  problems::PartitionPlan partition;
  std::uint64_t seed = 0;
  problems::ProblemOptions options;
};

/// Compressor as written in a config: sparsifiers may give a retained
/// fraction that is resolved against d when the run is planned.
struct CompressorConfig {
  compression::Kind kind = compression::Kind::identity;
  std::optional<int> k;
  std::optional<double> fraction;
  int s = 1;
  double p = 1.0;

  compression::CompressorSpec resolve(std::size_t d) const;
  std::string tag() const;
};

/// Sweep axes; an empty axis keeps the base value. In `top_k` and
/// `partition_alpha`, nullopt means "identity compressor" / "IID".
struct GridAxes {
  std::vector<topology::Kind> topology;
  std::vector<int> n;
  std::vector<localopt::Kind> optimizer;
  std::vector<std::optional<double>> partition_alpha;
  std::vector<int> K;
  std::vector<std::optional<double>> top_k;

  std::size_t size() const;
};

struct ExperimentConfig {
  ProblemConfig problem;
  engine::RunConfig run;  // compressor is filled per plan from `compressor`
  CompressorConfig compressor;
  /// When set, alpha follows 4 theta sqrt(n (B_inf^2 + delta)) / sqrt(TK).
  std::optional<double> theta;
  /// When set, every plan runs total_steps / K rounds (K must divide it).
  std::optional<long> total_steps;
  std::optional<GridAxes> grid;
  std::size_t grid_cap = 512;
  bool allow_large_grid = false;
  std::string output_dir = "lodadac_out";
  bool write_csv = true;
  bool write_json = true;
  /// The document the config was parsed from (echoed into the summary).
  json source;
};

/// One fully specified run of an experiment.
struct RunPlan {
  std::size_t index = 0;
  std::string name;
  ProblemConfig problem;
  CompressorConfig compressor;
  engine::RunConfig run;
  std::optional<double> theta;
  json axes = json::object();
};

/// Parses and validates a config document. Unknown keys and out-of-range
/// values raise ConfigError whose message starts with the field path.
ExperimentConfig parse_config_json(const json& doc);
ExperimentConfig parse_config(const std::string& path);

/// Cross product of the grid axes in a fixed order (topology, n, optimizer,
/// partition_alpha, K, top_k; the last varies fastest). Seeds are derived
/// from (run.seed, index). Throws ConfigError past the grid cap.
std::vector<RunPlan> enumerate_runs(const ExperimentConfig& config);

/// Resolved single-run config, sufficient to reproduce the run.
json plan_to_json(const RunPlan& plan);

/// Hash identifying the generated dataset of a plan (kind, sizes, partition,
/// seeds and loss options).
std::string problem_hash(const ProblemConfig& problem, int n);

/// Builds the problem and executes one plan, returning its summary entry.
/// Run errors are captured in the entry ("status"), never thrown.
json execute_plan(const RunPlan& plan, std::string* csv_out = nullptr);

/// Runs every plan, writing <name>.csv, <name>.config.json and summary.json
/// under the output directory. `jobs` > 1 runs plans concurrently; outputs do
/// not depend on it. Returns an ExitCode.
int run_experiments(const ExperimentConfig& config, std::ostream& log, int jobs = 1);

/// Prints an aligned comparison table of all runs found in the summaries.
/// When `series_dir` is set, writes each run's series downsampled to at most
/// `points` rows. Returns an ExitCode.
int report(const std::vector<std::string>& summary_paths, std::ostream& out,
           const std::optional<std::string>& series_dir = std::nullopt, std::size_t points = 200);

}  // namespace lodadac::experiment
