#include "lodadac/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

#include "lodadac/analysis.hpp"

namespace lodadac::engine {

namespace {

template <typename F>
void parallel_for(std::size_t count, int workers, F&& body) {
  const auto nthreads = static_cast<std::size_t>(std::max(1, workers));
  if (nthreads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const std::size_t used = std::min(nthreads, count);
  for (std::size_t w = 0; w < used; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += used) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

Vec average(std::span<const Vec> xs) {
  Vec mean(xs.front().size(), 0.0);
  for (const auto& x : xs)
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += x[k];
  for (double& v : mean) v /= static_cast<double>(xs.size());
  return mean;
}

Vec average_x(const std::vector<AgentState>& agents) {
  Vec mean(agents.front().x.size(), 0.0);
  for (const auto& a : agents)
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += a.x[k];
  for (double& v : mean) v /= static_cast<double>(agents.size());
  return mean;
}

void check_states(const std::vector<AgentState>& states, const topology::MixingMatrix& w) {
  if (states.size() != static_cast<std::size_t>(w.n()))
    throw std::invalid_argument("communication round: agent count does not match mixing matrix");
  const std::size_t d = states.front().x.size();
  for (const auto& s : states)
    if (s.x.size() != d || s.x_under.size() != d || s.y.size() != d)
      throw std::invalid_argument("communication round: dimension mismatch");
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  optimizer.validate();
  if (K < 1) throw std::invalid_argument("K must be >= 1");
  if (T < 1) throw std::invalid_argument("T must be >= 1");
  if (n < 2) throw std::invalid_argument("n must be >= 2");
  if (gamma && !(*gamma >= 0.0 && *gamma <= 1.0)) throw std::invalid_argument("gamma must lie in [0, 1]");
  if (record_every < 0) throw std::invalid_argument("record_every must be >= 0");
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (init_scale < 0.0) throw std::invalid_argument("init_scale must be >= 0");
  if (topology == topology::Kind::custom && !custom_graph) throw std::invalid_argument("custom topology needs a graph");
}

double RunRecord::best_grad_norm_sq() const {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : rows) best = std::min(best, r.grad_norm_sq);
  return rows.empty() ? 0.0 : best;
}

RoundStats comm_round_direct(std::vector<AgentState>& states, const topology::MixingMatrix& w, double gamma,
                             const compression::CompressorSpec& compressor, const compression::WireFormat& wire) {
  check_states(states, w);
  const std::size_t n = states.size();
  const std::size_t d = states.front().x.size();
  RoundStats stats;
  stats.bytes_per_agent.assign(n, 0);

  for (std::size_t i = 0; i < n; ++i) {
    AgentState& a = states[i];
    Vec delta(d);
    for (std::size_t k = 0; k < d; ++k) delta[k] = a.x[k] - a.x_under[k];
    auto q = compression::compress(compressor, delta, a.compress_rng, wire);
    for (std::size_t k = 0; k < d; ++k) a.x_under[k] += q.dense[k];
    stats.bytes_per_agent[i] = q.payload_bytes * w.out_degree(static_cast<int>(i));
    stats.bytes += stats.bytes_per_agent[i];
  }
  // Every x_under is final before any x reads it.
  for (std::size_t i = 0; i < n; ++i) {
    Vec mix(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      double wji = w(static_cast<int>(j), static_cast<int>(i));
      if (wji == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) mix[k] += wji * states[j].x_under[k];
    }
    AgentState& a = states[i];
    for (std::size_t k = 0; k < d; ++k) a.x[k] += gamma * (mix[k] - a.x_under[k]);
  }
  return stats;
}

RoundStats comm_round_bookkeeping(std::vector<AgentState>& states, const topology::MixingMatrix& w, double gamma,
                                  const compression::CompressorSpec& compressor, const compression::WireFormat& wire) {
  check_states(states, w);
  const std::size_t n = states.size();
  const std::size_t d = states.front().x.size();
  RoundStats stats;
  stats.bytes_per_agent.assign(n, 0);

  // One compressed message per agent, broadcast to all its neighbors.
  std::vector<Vec> messages(n);
  for (std::size_t i = 0; i < n; ++i) {
    AgentState& a = states[i];
    Vec delta(d);
    for (std::size_t k = 0; k < d; ++k) delta[k] = a.x[k] - a.x_under[k];
    auto q = compression::compress(compressor, delta, a.compress_rng, wire);
    stats.bytes_per_agent[i] = q.payload_bytes * w.out_degree(static_cast<int>(i));
    stats.bytes += stats.bytes_per_agent[i];
    messages[i] = std::move(q.dense);
  }
  for (std::size_t i = 0; i < n; ++i) {
    AgentState& a = states[i];
    for (std::size_t j = 0; j < n; ++j) {
      double wji = w(static_cast<int>(j), static_cast<int>(i));
      if (wji == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) a.y[k] += wji * messages[j][k];
    }
    for (std::size_t k = 0; k < d; ++k) a.x_under[k] += messages[i][k];
    for (std::size_t k = 0; k < d; ++k) a.x[k] += gamma * (a.y[k] - a.x_under[k]);
  }
  return stats;
}

ResolvedParams resolve_params(const RunConfig& config, const problems::ProblemSet& problem,
                              const topology::MixingMatrix& w) {
  ResolvedParams p;
  p.rho = w.rho();
  p.eta = compression::eta_of(config.compressor, problem.d);
  p.gamma_ceiling = (1.0 - p.rho) * (1.0 - p.eta * p.eta) / 100.0;
  p.gamma = config.gamma.value_or(config.theory_mode ? p.gamma_ceiling : 1.0);
  p.smoothness = problems::smoothness(problem);
  const double delta = config.optimizer.delta;
  if (problem.clip_b_inf) {
    double b_u = *problem.clip_b_inf * *problem.clip_b_inf;
    p.alpha_ceiling = delta / (48.0 * p.smoothness * std::sqrt(b_u + delta));
  }
  if (!config.theory_mode) return p;

  std::vector<std::string> violations;
  if (p.gamma > p.gamma_ceiling * (1.0 + 1e-12))
    violations.push_back("gamma=" + fmt_double(p.gamma) + " exceeds (1-rho)(1-eta^2)/100=" + fmt_double(p.gamma_ceiling));
  if (!(p.gamma > 0.0)) violations.push_back("gamma must be positive in theory mode");
  if (problem.clip_b_inf) {
    if (config.optimizer.alpha > p.alpha_ceiling * (1.0 + 1e-12))
      violations.push_back("alpha=" + fmt_double(config.optimizer.alpha) + " exceeds delta/(48 L sqrt(B_u+delta))=" +
                           fmt_double(p.alpha_ceiling));
  } else {
    p.warnings.push_back("no gradient clipping: alpha ceiling not checkable (B_inf unknown)");
  }
  const auto kind = config.optimizer.kind;
  if (kind == localopt::Kind::adam || kind == localopt::Kind::adam_mini) {
    double floor_b2 = localopt::min_beta2_for(config.total_steps());
    if (config.optimizer.beta2 < floor_b2)
      p.warnings.push_back("beta2=" + fmt_double(config.optimizer.beta2) + " below sqrt(TK)/(sqrt(TK)+1)=" +
                           fmt_double(floor_b2));
  }
  if (!violations.empty()) {
    if (config.strict) {
      std::string msg = "theory-mode violation:";
      for (const auto& v : violations) msg += " " + v + ";";
      throw TheoryViolation(msg);
    }
    for (auto& v : violations) p.warnings.push_back("theory-mode violation: " + v);
  }
  return p;
}

Simulation::Simulation(const RunConfig& config, const problems::ProblemSet& problem)
    : config_(config),
      problem_(problem),
      w_([&] {
        config.validate();
        if (problem.n_agents() != static_cast<std::size_t>(config.n))
          throw std::invalid_argument("topology n=" + std::to_string(config.n) + " does not match problem agents=" +
                                      std::to_string(problem.n_agents()));
        return topology::build_topology(config.topology, config.n,
                                        config.custom_graph ? &*config.custom_graph : nullptr);
      }()) {
  config_.compressor.validate(problem.d);
  params_ = resolve_params(config_, problem_, w_);

  const std::size_t d = problem.d;
  Vec x0(d, 0.0);
  if (config_.init_scale > 0.0) {
    Rng init = make_stream(config_.seed, {0x1a17u});
    std::normal_distribution<double> normal(0.0, config_.init_scale);
    for (double& v : x0) v = normal(init);
  }
  agents_.reserve(config_.n);
  for (int i = 0; i < config_.n; ++i) {
    auto ui = static_cast<std::uint32_t>(i);
    agents_.push_back(AgentState{x0, x0, x0, localopt::OptimizerState::zeros(config_.optimizer, d),
                                 make_stream(config_.seed, {ui, 1u}), make_stream(config_.seed, {ui, 2u})});
  }

  const long tk = config_.total_steps();
  record_every_ = config_.record_every > 0 ? config_.record_every : (tk <= 10000 ? 1 : config_.K);
  record_.total_steps = tk;
  record_.n = config_.n;
  record_.d = d;
  record_.K = config_.K;
  record_.rho = params_.rho;
  record_.eta = params_.eta;
  record_.gamma = params_.gamma;
  record_.alpha = config_.optimizer.alpha;
  record_.smoothness = params_.smoothness;
  record_.warnings = params_.warnings;
  record_.bytes_per_agent.assign(config_.n, 0);
  record_.consensus_sq.reserve(static_cast<std::size_t>(tk));
  if (config_.record_history) record_.history.emplace();
}

void Simulation::record_metrics(long t, std::span<const Vec> xs) {
  const Vec xbar = average(xs);
  const double cons = analysis::consensus_error(xs);
  if (t < record_.total_steps) record_.consensus_sq.push_back(cons * static_cast<double>(xs.size()));
  if (record_.history) record_.history->xbar.push_back(xbar);
  if (t % record_every_ != 0 && t != record_.total_steps) return;
  auto [loss, grad] = problems::full_grad_and_loss(problem_, xbar);
  record_.rows.push_back(MetricRow{t, t / config_.K, loss, norm_sq(grad), cons, bytes_});
}

void Simulation::local_phase() {
  if (in_phase_) throw std::logic_error("local_phase called twice without a communication round");
  const int K = config_.K;
  const std::size_t n = agents_.size();
  const auto& spec = config_.optimizer;
  const bool hist = record_.history.has_value();

  struct Extremes {
    double m_norm = 0.0, m_inf = 0.0, g_norm = 0.0, g_inf = 0.0, u_max = 0.0;
  };
  std::vector<std::vector<Vec>> snaps(K, std::vector<Vec>(n));
  std::vector<Extremes> ext(n);
  std::vector<std::vector<Vec>> hm, hg, hdiv;
  if (hist) {
    hm.assign(K, std::vector<Vec>(n));
    hg.assign(K, std::vector<Vec>(n));
    hdiv.assign(K, std::vector<Vec>(n));
  }
  std::vector<Vec> frozen_under(n), frozen_y(n);
  for (std::size_t i = 0; i < n; ++i) {
    frozen_under[i] = agents_[i].x_under;
    frozen_y[i] = agents_[i].y;
  }

  parallel_for(n, config_.workers, [&](std::size_t i) {
    AgentState& a = agents_[i];
    Extremes& e = ext[i];
    for (int s = 0; s < K; ++s) {
      snaps[s][i] = a.x;
      Vec g = problems::stochastic_grad(problem_, i, a.x, config_.batch_size, a.sample_rng);
      localopt::update_first_moment(a.opt, g, spec.beta1);
      const Vec& u = localopt::update_second_moment(spec, a.opt, g);
      Vec half = localopt::local_step(a.opt, a.x, spec);
      ++a.opt.t;
      e.m_norm = std::max(e.m_norm, std::sqrt(norm_sq(a.opt.m)));
      e.m_inf = std::max(e.m_inf, norm_inf(a.opt.m));
      e.g_norm = std::max(e.g_norm, std::sqrt(norm_sq(g)));
      e.g_inf = std::max(e.g_inf, norm_inf(g));
      e.u_max = std::max(e.u_max, norm_inf(u));
      if (hist) {
        hm[s][i] = a.opt.m;
        hdiv[s][i] = a.opt.u_prev;
        hg[s][i] = std::move(g);
      }
      a.x = std::move(half);
    }
  });

  for (std::size_t i = 0; i < n; ++i) {
    if (agents_[i].x_under != frozen_under[i] || agents_[i].y != frozen_y[i]) ++record_.gating_violations;
    record_.max_m_norm = std::max(record_.max_m_norm, ext[i].m_norm);
    record_.max_m_inf = std::max(record_.max_m_inf, ext[i].m_inf);
    record_.max_g_norm = std::max(record_.max_g_norm, ext[i].g_norm);
    record_.max_g_inf = std::max(record_.max_g_inf, ext[i].g_inf);
    record_.max_u_entry = std::max(record_.max_u_entry, ext[i].u_max);
  }
  for (int s = 0; s < K; ++s) {
    record_metrics(t_ + s, snaps[s]);
    if (hist) {
      record_.history->m.push_back(std::move(hm[s]));
      record_.history->g.push_back(std::move(hg[s]));
      record_.history->divisor.push_back(std::move(hdiv[s]));
    }
  }
  t_ += K;
  in_phase_ = true;
}

RoundStats Simulation::communicate() {
  if (!in_phase_) throw std::logic_error("communicate called before local_phase");
  const Vec before = average_x(agents_);
  RoundStats stats = config_.variant == CommVariant::direct
                         ? comm_round_direct(agents_, w_, params_.gamma, config_.compressor, config_.wire)
                         : comm_round_bookkeeping(agents_, w_, params_.gamma, config_.compressor, config_.wire);
  const Vec after = average_x(agents_);
  for (std::size_t k = 0; k < before.size(); ++k)
    record_.avg_preservation_max = std::max(record_.avg_preservation_max, std::abs(after[k] - before[k]));
  bytes_ += stats.bytes;
  for (std::size_t i = 0; i < stats.bytes_per_agent.size(); ++i) record_.bytes_per_agent[i] += stats.bytes_per_agent[i];
  ++rounds_;
  in_phase_ = false;
  return stats;
}

void Simulation::run_round() {
  local_phase();
  communicate();
}

RunRecord Simulation::finish() {
  if (in_phase_) throw std::logic_error("finish called in the middle of a round");
  std::vector<Vec> xs;
  xs.reserve(agents_.size());
  for (const auto& a : agents_) xs.push_back(a.x);
  // The terminal row is only defined after the last scheduled round.
  record_.total_steps = t_;
  record_metrics(t_, xs);
  record_.rounds = rounds_;
  record_.bytes_total = bytes_;
  long links = 0;
  for (int deg : w_.degrees()) links += deg;
  record_.bytes_per_link_round = (links > 0 && rounds_ > 0)
                                     ? static_cast<double>(bytes_) / static_cast<double>(links * rounds_)
                                     : 0.0;
  double acc = 0.0;
  for (const auto& a : agents_) acc += a.opt.inv_sqrt_diff_sum;
  record_.inv_sqrt_diff_mean = acc / static_cast<double>(agents_.size());
  record_.final_agents = agents_;
  return std::move(record_);
}

RunRecord run(const RunConfig& config, const problems::ProblemSet& problem) {
  Simulation sim(config, problem);
  for (long r = 0; r < config.T; ++r) sim.run_round();
  return sim.finish();
}

double z_sequence_probe(const std::optional<History>& history, double alpha, double beta1, double delta) {
  if (!history || history->g.empty()) throw std::invalid_argument("z_sequence_probe: no history recorded");
  const History& h = *history;
  const std::size_t steps = h.g.size();
  if (h.xbar.size() < steps + 1) throw std::invalid_argument("z_sequence_probe: history is incomplete");
  const std::size_t n = h.g.front().size();
  const std::size_t d = h.xbar.front().size();
  const double c = beta1 / (1.0 - beta1);
  const double an = alpha / static_cast<double>(n);

  auto z_at = [&](std::size_t t, std::size_t k) {
    double prev = t == 0 ? h.xbar[0][k] : h.xbar[t - 1][k];
    return h.xbar[t][k] + c * (h.xbar[t][k] - prev);
  };

  double worst = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t k = 0; k < d; ++k) {
      double momentum_term = 0.0, grad_term = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double u1 = h.divisor[t][i][k];
        const double inv1 = 1.0 / std::sqrt(u1 + delta);
        grad_term += h.g[t][i][k] * inv1;
        if (t > 0) {
          const double u2 = h.divisor[t - 1][i][k];
          momentum_term += h.m[t - 1][i][k] * (1.0 / std::sqrt(u2 + delta) - inv1);
        }
      }
      double rhs = c * an * momentum_term - an * grad_term;
      double lhs = z_at(t + 1, k) - z_at(t, k);
      worst = std::max(worst, std::abs(lhs - rhs));
    }
  }
  return worst;
}

void write_csv(const RunRecord& record, std::ostream& out) {
  out << "t,round,loss,grad_norm_sq,consensus_err,bytes_cumulative\n";
  for (const auto& r : record.rows) {
    out << r.t << ',' << r.round << ',' << fmt_double(r.loss) << ',' << fmt_double(r.grad_norm_sq) << ','
        << fmt_double(r.consensus_err) << ',' << r.bytes_cumulative << '\n';
  }
}

}  // namespace lodadac::engine
