#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lodadac/common.hpp"
#include "lodadac/compression.hpp"
#include "lodadac/engine.hpp"
#include "lodadac/localopt.hpp"
#include "lodadac/topology.hpp"

namespace lodadac::analysis {

/// (1/n) ||X (I - J)||_F^2 where the columns of X are the agent iterates.
double consensus_error(std::span<const Vec> columns);

/// C̄ = 56/(gamma (1-rho)) * (80/(gamma (1-rho)) + 15/(1-eta^2)) * B^2 / delta.
/// Throws std::domain_error unless gamma (1-rho) > 0, eta < 1, delta > 0.
double cbar(double gamma, double rho, double eta, double B, double delta);

/// Parameters entering the theoretical bounds. B and B_inf bound ||g||_2 and
/// ||g||_inf; B_u bounds ||u||_inf (B_inf^2 for the diagonal optimizers).
struct TheoryParams {
  double rho = 0.0;
  double eta = 0.0;
  double gamma = 0.0;
  double alpha = 0.0;
  double delta = 1.0;
  double B = 0.0;
  double B_inf = 0.0;
  double L = 0.0;
  int n = 0;
  int K = 1;
  long T = 0;
  /// False when B/B_inf were estimated from observed gradients rather than
  /// enforced by clipping.
  bool rigorous = true;

  double B_u() const { return B_inf * B_inf; }
  double gamma_ceiling() const { return (1.0 - rho) * (1.0 - eta * eta) / 100.0; }
};

/// Builds TheoryParams for a finished run. With clipping, B_inf is the clip
/// level and B = sqrt(d) B_inf; otherwise both come from the observed maxima
/// and `rigorous` is false.
TheoryParams params_from_run(const engine::RunRecord& run, const engine::RunConfig& config,
                             const std::optional<double>& clip_b_inf);

struct ConsensusBoundReport {
  double empirical = 0.0;  // (1/TK) sum_t ||X_perp^t||^2
  double bound = 0.0;      // alpha^2 n K^2 C̄
  double cbar = 0.0;
  double ratio = 0.0;      // empirical / bound (0 when both vanish)
  bool holds = false;
  bool rigorous = true;
};

/// Throws std::invalid_argument when the run lacks per-iteration consensus data.
ConsensusBoundReport check_consensus_bound(const engine::RunRecord& run, const TheoryParams& params);

struct StepsizeSchedule {
  double alpha = 0.0;            // 4 theta sqrt(n (B_inf^2 + delta)) / sqrt(TK)
  double ceiling = 0.0;          // min{delta / (48 L sqrt(B_inf^2 + delta)), 1}
  double theorem_ceiling = 0.0;  // delta / (48 L sqrt(B_u + delta)), B_u = B_inf^2
  bool feasible = false;
};

StepsizeSchedule stepsize_schedule(int n, long T, int K, double B_inf, double delta, double theta, double L);

/// Network bytes for T rounds: T * sum_i payload(compressor, d) * deg_i.
/// Exact for deterministic-size compressors; the expectation for gossip_drop.
double comm_cost_model(long T, const compression::CompressorSpec& compressor, const topology::MixingMatrix& w,
                       std::size_t d, const compression::WireFormat& wire = {});

struct LemmaD1Report {
  localopt::Kind kind = localopt::Kind::adam;
  double measured = 0.0;
  double ceiling = 0.0;
  bool passed = false;
  std::string rule;
};

/// Ceilings: amsgrad d/delta; adam/adam_mini TK d (1-beta2)^2 B_inf^4/delta^3;
/// avg_adagrad 2 d B_inf^4/delta^3; matrix_adagrad 2 d^2 B_inf^4/delta^3;
/// SGD kinds require the sum to be exactly 0.
LemmaD1Report lemma_d1_check(const engine::RunRecord& run, const localopt::OptimizerSpec& spec, double B_inf);

struct LemmaA1Report {
  double max_m_norm = 0.0;
  double max_m_inf = 0.0;
  double max_u_entry = 0.0;
  bool m_norm_ok = false;
  bool m_inf_ok = false;
  bool u_ok = false;
  bool passed() const { return m_norm_ok && m_inf_ok && u_ok; }
};

/// ||m_i^t|| <= B, ||m_i^t||_inf <= B_inf and ||u_i^t||_inf <= B_inf^2 over the run.
LemmaA1Report lemma_a1_check(const engine::RunRecord& run, double B, double B_inf);

}  // namespace lodadac::analysis
