#include "lodadac/analysis.hpp"

#include <cmath>
#include <stdexcept>

namespace lodadac::analysis {

double consensus_error(std::span<const Vec> columns) {
  const std::size_t n = columns.size();
  if (n < 2) throw std::invalid_argument("consensus_error: need at least 2 agents");
  const std::size_t d = columns.front().size();
  // Column i of X(I - J) is x_i - (1/n) sum_j x_j.
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double row_mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) row_mean += columns[j][k] * inv_n;
    for (std::size_t i = 0; i < n; ++i) {
      double e = columns[i][k] - row_mean;
      total += e * e;
    }
  }
  return total * inv_n;
}

double cbar(double gamma, double rho, double eta, double B, double delta) {
  const double gr = gamma * (1.0 - rho);
  if (!(gr > 0.0)) throw std::domain_error("cbar: gamma (1 - rho) must be positive");
  if (!(eta >= 0.0 && eta < 1.0)) throw std::domain_error("cbar: eta must lie in [0, 1)");
  if (!(delta > 0.0)) throw std::domain_error("cbar: delta must be positive");
  return 56.0 / gr * (80.0 / gr + 15.0 / (1.0 - eta * eta)) * B * B / delta;
}

TheoryParams params_from_run(const engine::RunRecord& run, const engine::RunConfig& config,
                             const std::optional<double>& clip_b_inf) {
  TheoryParams p;
  p.rho = run.rho;
  p.eta = run.eta;
  p.gamma = run.gamma;
  p.alpha = config.optimizer.alpha;
  p.delta = config.optimizer.delta;
  p.L = run.smoothness;
  p.n = run.n;
  p.K = run.K;
  p.T = run.rounds;
  if (clip_b_inf) {
    p.B_inf = *clip_b_inf;
    p.B = std::sqrt(static_cast<double>(run.d)) * *clip_b_inf;
    p.rigorous = true;
  } else {
    p.B_inf = run.max_g_inf;
    p.B = run.max_g_norm;
    p.rigorous = false;
  }
  return p;
}

ConsensusBoundReport check_consensus_bound(const engine::RunRecord& run, const TheoryParams& params) {
  if (run.consensus_sq.empty() || static_cast<long>(run.consensus_sq.size()) != run.total_steps)
    throw std::invalid_argument("check_consensus_bound: per-iteration consensus error missing");
  ConsensusBoundReport rep;
  double sum = 0.0;
  for (double c : run.consensus_sq) sum += c;
  rep.empirical = sum / static_cast<double>(run.consensus_sq.size());
  rep.cbar = cbar(params.gamma, params.rho, params.eta, params.B, params.delta);
  rep.bound = params.alpha * params.alpha * params.n * static_cast<double>(params.K) * params.K * rep.cbar;
  rep.ratio = rep.bound > 0.0 ? rep.empirical / rep.bound : (rep.empirical > 0.0 ? INFINITY : 0.0);
  rep.holds = rep.empirical <= rep.bound;
  rep.rigorous = params.rigorous;
  return rep;
}

StepsizeSchedule stepsize_schedule(int n, long T, int K, double B_inf, double delta, double theta, double L) {
  StepsizeSchedule s;
  const double root = std::sqrt(B_inf * B_inf + delta);
  s.alpha = 4.0 * theta * std::sqrt(static_cast<double>(n) * (B_inf * B_inf + delta)) /
            std::sqrt(static_cast<double>(T) * static_cast<double>(K));
  s.theorem_ceiling = delta / (48.0 * L * root);
  s.ceiling = std::min(s.theorem_ceiling, 1.0);
  s.feasible = s.alpha <= s.ceiling;
  return s;
}

double comm_cost_model(long T, const compression::CompressorSpec& compressor, const topology::MixingMatrix& w,
                       std::size_t d, const compression::WireFormat& wire) {
  const double per_message = compression::expected_payload_bytes(compressor, d, wire);
  double per_round = 0.0;
  for (int deg : w.degrees()) per_round += per_message * deg;
  return static_cast<double>(T) * per_round;
}

LemmaD1Report lemma_d1_check(const engine::RunRecord& run, const localopt::OptimizerSpec& spec, double B_inf) {
  LemmaD1Report rep;
  rep.kind = spec.kind;
  rep.measured = run.inv_sqrt_diff_mean;
  const double d = static_cast<double>(run.d);
  const double b4 = std::pow(B_inf, 4);
  const double delta3 = std::pow(spec.delta, 3);
  switch (spec.kind) {
    case localopt::Kind::vanilla_sgd:
    case localopt::Kind::momentum_sgd:
      rep.ceiling = 0.0;
      rep.rule = "sum == 0";
      rep.passed = rep.measured == 0.0;
      return rep;
    case localopt::Kind::amsgrad:
      rep.ceiling = d / spec.delta;
      rep.rule = "d/delta";
      break;
    case localopt::Kind::adam:
    case localopt::Kind::adam_mini:
      rep.ceiling = static_cast<double>(run.total_steps) * d * (1.0 - spec.beta2) * (1.0 - spec.beta2) * b4 / delta3;
      rep.rule = "TK d (1-beta2)^2 B_inf^4/delta^3";
      break;
    case localopt::Kind::avg_adagrad:
      rep.ceiling = 2.0 * d * b4 / delta3;
      rep.rule = "2 d B_inf^4/delta^3";
      break;
    case localopt::Kind::matrix_adagrad:
      rep.ceiling = 2.0 * d * d * b4 / delta3;
      rep.rule = "2 d^2 B_inf^4/delta^3";
      break;
  }
  rep.passed = rep.measured <= rep.ceiling;
  return rep;
}

LemmaA1Report lemma_a1_check(const engine::RunRecord& run, double B, double B_inf) {
  LemmaA1Report rep;
  rep.max_m_norm = run.max_m_norm;
  rep.max_m_inf = run.max_m_inf;
  rep.max_u_entry = run.max_u_entry;
  // One ulp of slack: the recursion is a convex combination of clipped values.
  constexpr double kUlp = 1.0 + 1e-12;
  rep.m_norm_ok = run.max_m_norm <= B * kUlp;
  rep.m_inf_ok = run.max_m_inf <= B_inf * kUlp;
  rep.u_ok = run.max_u_entry <= B_inf * B_inf * kUlp;
  return rep;
}

}  // namespace lodadac::analysis
