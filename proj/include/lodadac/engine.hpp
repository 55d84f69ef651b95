#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lodadac/common.hpp"
#include "lodadac/compression.hpp"
#include "lodadac/localopt.hpp"
#include "lodadac/problems.hpp"
#include "lodadac/topology.hpp"

namespace lodadac::engine {

/// One agent's private state. Between communication rounds only `x` and
/// `opt` change; `x_under` and `y` move only inside a communication round.
struct AgentState {
  Vec x;
  Vec x_under;  // compression reference
  Vec y;        // running sum of W_ji * Q[...] received, seeded with x_under
  localopt::OptimizerState opt;
  Rng sample_rng;
  Rng compress_rng;
};

/// How the mixing term sum_j W_ji x_under_j is formed: `direct` reads the
/// neighbors' references (simulation-only), `bookkeeping` uses the y
/// accumulator fed exclusively by compressed deltas.
enum class CommVariant { bookkeeping, direct };

struct RunConfig {
  localopt::OptimizerSpec optimizer;
  compression::CompressorSpec compressor;
  topology::Kind topology = topology::Kind::ring;
  int n = 4;
  std::optional<topology::Graph> custom_graph;
  int K = 1;
  long T = 1;
  /// Unset: the theory ceiling (1-rho)(1-eta^2)/100 in theory mode, else 1.0.
  std::optional<double> gamma;
  std::uint64_t seed = 0;
  bool theory_mode = false;
  /// In theory mode, violations raise TheoryViolation instead of a warning.
  bool strict = false;
  /// Loss/gradient metric cadence; 0 picks every iteration for TK <= 1e4,
  /// otherwise every K.
  long record_every = 0;
  /// Minibatch size; 0 means full batch.
  std::size_t batch_size = 1;
  int workers = 1;
  bool record_history = false;
  CommVariant variant = CommVariant::bookkeeping;
  /// Std-dev of the shared random starting point x^0 (0 gives x^0 = 0).
  double init_scale = 0.0;
  compression::WireFormat wire;

  void validate() const;
  long total_steps() const { return T * static_cast<long>(K); }
};

struct MetricRow {
  long t = 0;
  long round = 0;
  double loss = 0.0;
  double grad_norm_sq = 0.0;
  double consensus_err = 0.0;  // (1/n)||X_perp||_F^2
  std::int64_t bytes_cumulative = 0;
};

/// Per-iteration traces needed for the z-sequence identity.
struct History {
  std::vector<Vec> xbar;                  // x̄^0 .. x̄^{TK}
  std::vector<std::vector<Vec>> m;        // [t][i] = m_i^t
  std::vector<std::vector<Vec>> g;        // [t][i] = g_i^t
  std::vector<std::vector<Vec>> divisor;  // [t][i] = u_i^{t-1} (the step divisor)
};

struct RunRecord {
  std::vector<MetricRow> rows;
  /// ||X_perp^t||_F^2 for every t in 0..TK-1 (not divided by n).
  std::vector<double> consensus_sq;
  long total_steps = 0;
  long rounds = 0;
  int n = 0;
  std::size_t d = 0;
  int K = 1;
  double rho = 0.0;
  double eta = 0.0;
  double gamma = 0.0;
  double alpha = 0.0;
  double smoothness = 0.0;
  std::int64_t bytes_total = 0;
  /// bytes_total divided by the number of directed links and rounds.
  double bytes_per_link_round = 0.0;
  std::vector<std::int64_t> bytes_per_agent;
  /// (1/n) sum_i of each agent's inverse-root difference accumulator.
  double inv_sqrt_diff_mean = 0.0;
  double max_u_entry = 0.0;
  double max_m_norm = 0.0;
  double max_m_inf = 0.0;
  double max_g_norm = 0.0;
  double max_g_inf = 0.0;
  /// Largest |x̄ after mixing - x̄ before mixing|_inf over all rounds.
  double avg_preservation_max = 0.0;
  /// Rounds where x_under or y changed outside a communication round.
  long gating_violations = 0;
  std::vector<std::string> warnings;
  std::vector<AgentState> final_agents;
  std::optional<History> history;

  double final_loss() const { return rows.empty() ? 0.0 : rows.back().loss; }
  double best_grad_norm_sq() const;
};

struct RoundStats {
  std::int64_t bytes = 0;
  std::vector<std::int64_t> bytes_per_agent;
};

/// x_under_i += Q[x_i - x_under_i] for every agent, then
/// x_i += gamma (sum_j W_ji x_under_j - x_under_i). `states[i].x` holds
/// x^{t+1/2} on entry and x^{t+1} on exit.
RoundStats comm_round_direct(std::vector<AgentState>& states, const topology::MixingMatrix& w, double gamma,
                             const compression::CompressorSpec& compressor,
                             const compression::WireFormat& wire = {});

/// Same update formed from compressed messages only: each agent compresses
/// its delta once, y_i += sum_j W_ji Q_j, x_i += gamma (y_i - x_under_i).
RoundStats comm_round_bookkeeping(std::vector<AgentState>& states, const topology::MixingMatrix& w, double gamma,
                                  const compression::CompressorSpec& compressor,
                                  const compression::WireFormat& wire = {});

/// Resolved step-size/mixing parameters for a config on a given problem.
struct ResolvedParams {
  double rho = 0.0;
  double eta = 0.0;
  double gamma = 0.0;
  double gamma_ceiling = 0.0;
  double alpha_ceiling = 0.0;  // delta / (48 L sqrt(B_u + delta)); 0 when unknown
  double smoothness = 0.0;
  std::vector<std::string> warnings;
};

ResolvedParams resolve_params(const RunConfig& config, const problems::ProblemSet& problem,
                              const topology::MixingMatrix& w);

/// Bulk-synchronous simulation of the algorithm. Each call to run_round()
/// performs K local adaptive steps on every agent (in parallel across
/// `workers` threads) followed by one communication round.
class Simulation {
public:
  Simulation(const RunConfig& config, const problems::ProblemSet& problem);

  void run_round();
  /// Local phase only; leaves x = x^{t+1/2} of the last local step.
  void local_phase();
  /// Communication round using the configured variant.
  RoundStats communicate();

  const std::vector<AgentState>& agents() const { return agents_; }
  std::vector<AgentState>& agents() { return agents_; }
  const topology::MixingMatrix& mixing() const { return w_; }
  long step() const { return t_; }
  long rounds_done() const { return rounds_; }
  const ResolvedParams& params() const { return params_; }

  /// Records the terminal metric row and returns the full record.
  RunRecord finish();

private:
  void record_metrics(long t, std::span<const Vec> xs);

  RunConfig config_;
  const problems::ProblemSet& problem_;
  topology::MixingMatrix w_;
  ResolvedParams params_;
  std::vector<AgentState> agents_;
  RunRecord record_;
  long t_ = 0;
  long rounds_ = 0;
  long record_every_ = 1;
  std::int64_t bytes_ = 0;
  bool in_phase_ = false;
};

/// Runs T rounds. Deterministic in config.seed and independent of
/// config.workers.
RunRecord run(const RunConfig& config, const problems::ProblemSet& problem);

/// Max over t of ||(z^{t+1} - z^t) - rhs_t||_inf with
/// z^t = x̄^t + beta1/(1-beta1) (x̄^t - x̄^{t-1}), x̄^{-1} = x̄^0, and
/// rhs_t = beta1/(1-beta1) (alpha/n) sum_i m_i^{t-1} o (1/sqrt(u_i^{t-2}+delta) - 1/sqrt(u_i^{t-1}+delta))
///         - (alpha/n) sum_i g_i^t / sqrt(u_i^{t-1}+delta).
/// Throws std::invalid_argument when the history is missing or empty.
double z_sequence_probe(const std::optional<History>& history, double alpha, double beta1, double delta);

/// CSV with columns t,round,loss,grad_norm_sq,consensus_err,bytes_cumulative.
void write_csv(const RunRecord& record, std::ostream& out);

}  // namespace lodadac::engine
