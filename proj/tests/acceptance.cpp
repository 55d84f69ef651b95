// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "lodadac/analysis.hpp"
#include "lodadac/compression.hpp"
#include "lodadac/engine.hpp"
#include "lodadac/experiment.hpp"
#include "lodadac/problems.hpp"
#include "lodadac/topology.hpp"

using namespace lodadac;

namespace {

struct Outcome {
  bool passed = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      detail += (detail.empty() ? "" : "; ") + std::string("FAILED ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Largest average drift over all communication rounds of every run in this binary.
double g_avg_drift = 0.0;
long g_runs = 0;
long g_rounds = 0;

engine::RunRecord tracked_run(const engine::RunConfig& config, const problems::ProblemSet& problem) {
  auto r = engine::run(config, problem);
  g_avg_drift = std::max(g_avg_drift, r.avg_preservation_max);
  g_runs += 1;
  g_rounds += r.rounds;
  return r;
}

engine::RunConfig ring4(localopt::Kind kind, int K, long T) {
  engine::RunConfig c;
  c.optimizer.kind = kind;
  c.optimizer.beta1 = kind == localopt::Kind::vanilla_sgd ? 0.0 : 0.9;
  c.topology = topology::Kind::ring;
  c.n = 4;
  c.K = K;
  c.T = T;
  c.seed = 2024;
  return c;
}

Outcome compressor_contraction() {
  Outcome o;
  const std::size_t d = 16;
  const int trials = 100000;
  Rng rng = make_stream(1, {1});
  double worst = INFINITY;
  for (auto spec : {compression::CompressorSpec::identity(), compression::CompressorSpec::top_k(4),
                    compression::CompressorSpec::random_k(4), compression::CompressorSpec::qsgd(1),
                    compression::CompressorSpec::qsgd(2), compression::CompressorSpec::gossip_drop(0.6)}) {
    auto rep = compression::certify_contraction(spec, d, trials, rng);
    o.require(rep.probes.size() >= 5, spec.describe() + " has fewer than 5 probes");
    for (const auto& p : rep.probes) {
      o.require(p.passed, spec.describe() + "/" + p.probe);
      worst = std::min(worst, p.eta_sq + 3.0 * p.std_error - p.mean_ratio);
    }
  }
  o.note("min margin to eta^2 + 3 SE " + fmt("%.3g", worst) + " (deterministic probes sit at equality up to roundoff)");
  auto rk = compression::certify_contraction(compression::CompressorSpec::random_k(1), 3, trials, rng);
  double worst_z = 0.0;
  for (const auto& p : rk.probes) {
    double z = std::abs(p.mean_ratio - 2.0 / 3.0) / p.std_error;
    worst_z = std::max(worst_z, z);
    o.require(z <= 3.0, "random_k(d=3,k=1)/" + p.probe + " off 2/3");
  }
  o.note("random_k(3,1) max |mean-2/3|/SE " + fmt("%.2f", worst_z));
  return o;
}

Outcome mixing_validation() {
  Outcome o;
  auto ring = topology::build_topology(topology::Kind::ring, 4);
  o.require(std::abs(ring.rho() - 1.0 / 3.0) <= 1e-9, "ring n=4 rho");
  auto complete = topology::build_topology(topology::Kind::complete, 4);
  o.require(complete.rho() <= 1e-12, "complete rho");
  int built = 0;
  auto check = [&](const topology::MixingMatrix& w, const std::string& name) {
    auto rep = topology::validate_mixing(w, 1e-12);
    o.require(rep.all_passed(), name + " residual checks");
    ++built;
  };
  for (int n = 2; n <= 32; ++n) {
    check(topology::build_topology(topology::Kind::ring, n), "ring n=" + std::to_string(n));
    check(topology::build_topology(topology::Kind::complete, n), "complete n=" + std::to_string(n));
  }
  for (int n : {4, 9, 16, 25}) check(topology::build_topology(topology::Kind::grid2d, n), "grid n=" + std::to_string(n));
  o.note("ring rho " + fmt("%.15f", ring.rho()) + ", complete rho " + fmt("%.2g", complete.rho()) + ", " +
         std::to_string(built) + " matrices validated");
  return o;
}

double max_variant_gap(double gamma) {
  auto p = problems::make_problem(problems::Kind::logistic, 10, 4, 50, problems::PartitionPlan::iid(3), 3);
  auto c = ring4(localopt::Kind::adam, 1, 100);
  c.optimizer.alpha = 0.01;
  c.optimizer.delta = 1e-3;
  c.gamma = gamma;
  c.compressor = compression::CompressorSpec::top_k(compression::k_from_fraction(0.3, 10));
  c.batch_size = 4;
  auto direct = c;
  direct.variant = engine::CommVariant::direct;
  auto book = c;
  book.variant = engine::CommVariant::bookkeeping;
  engine::Simulation a(direct, p), b(book, p);
  double worst = 0.0;
  for (int r = 0; r < 100; ++r) {
    a.run_round();
    b.run_round();
    for (int i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < 10; ++k)
        worst = std::max(worst, std::abs(a.agents()[i].x[k] - b.agents()[i].x[k]));
  }
  auto ra = a.finish();
  auto rb = b.finish();
  g_avg_drift = std::max({g_avg_drift, ra.avg_preservation_max, rb.avg_preservation_max});
  g_runs += 2;
  g_rounds += ra.rounds + rb.rounds;
  return worst;
}

Outcome bookkeeping_equivalence() {
  Outcome o;
  const double worst = max_variant_gap(0.4);
  o.require(worst <= 1e-12, "trajectories diverge");
  o.note("gamma 0.4: max coordinate deviation " + fmt("%.3g", worst) + " over 100 rounds");
  // Informational: at gamma = 1 the compressed mixing amplifies roundoff between the variants.
  o.note("gamma 1.0 (not checked): " + fmt("%.3g", max_variant_gap(1.0)));
  return o;
}

Outcome z_sequence() {
  Outcome o;
  auto p = problems::make_problem(problems::Kind::logistic, 10, 4, 50, problems::PartitionPlan::iid(4), 4);
  auto c = ring4(localopt::Kind::adam, 5, 40);
  c.optimizer.alpha = 0.01;
  c.optimizer.delta = 1e-3;
  c.optimizer.beta1 = 0.9;
  c.compressor = compression::CompressorSpec::top_k(5);
  c.record_history = true;
  auto r = tracked_run(c, p);
  double res = engine::z_sequence_probe(r.history, c.optimizer.alpha, c.optimizer.beta1, c.optimizer.delta);
  o.require(r.total_steps == 200, "run length");
  o.require(res <= 1e-10, "residual");
  o.note("residual " + fmt("%.3g", res) + " over " + std::to_string(r.total_steps) + " iterations");
  return o;
}

Outcome lemma_d1() {
  Outcome o;
  problems::ProblemOptions opts;
  opts.clip_b_inf = 1.0;
  auto p = problems::make_problem(problems::Kind::least_squares, 10, 4, 50, problems::PartitionPlan::iid(5), 5, opts);
  const long T = 100;
  const int K = 5;
  struct Case {
    localopt::Kind kind;
    double limit;
  };
  for (auto [kind, limit] : {Case{localopt::Kind::amsgrad, 10.0}, Case{localopt::Kind::avg_adagrad, 20.0},
                             Case{localopt::Kind::adam, 10.0}, Case{localopt::Kind::vanilla_sgd, 0.0},
                             Case{localopt::Kind::momentum_sgd, 0.0}}) {
    auto c = ring4(kind, K, T);
    c.optimizer.alpha = 0.05;
    c.optimizer.delta = 1.0;
    c.optimizer.beta2 = kind == localopt::Kind::adam ? localopt::min_beta2_for(T * K) : 0.9;
    c.init_scale = 5.0;
    auto r = tracked_run(c, p);
    auto rep = analysis::lemma_d1_check(r, c.optimizer, 1.0);
    const bool sgd = limit == 0.0;
    o.require(sgd ? rep.measured == 0.0 : rep.measured <= limit, localopt::to_string(kind));
    o.require(rep.passed, localopt::to_string(kind) + " ceiling " + rep.rule);
    o.note(localopt::to_string(kind) + " " + fmt("%.4g", rep.measured) + (sgd ? " == 0" : " <= " + fmt("%g", limit)));
  }
  return o;
}

Outcome consensus_bound() {
  Outcome o;
  problems::ProblemOptions opts;
  opts.clip_b_inf = 1.0;
  auto p = problems::make_problem(problems::Kind::least_squares, 10, 4, 50, problems::PartitionPlan::iid(6), 6, opts);
  auto c = ring4(localopt::Kind::adam, 5, 200);
  c.theory_mode = true;
  c.strict = true;
  c.compressor = compression::CompressorSpec::top_k(compression::k_from_fraction(0.5, 10));
  c.optimizer.delta = 1.0;
  c.optimizer.beta2 = localopt::min_beta2_for(c.total_steps());
  c.init_scale = 1.0;
  const double theta = 1e-3;
  auto sched = analysis::stepsize_schedule(4, c.T, c.K, 1.0, c.optimizer.delta, theta, problems::smoothness(p));
  o.require(sched.feasible, "step size above ceiling");
  c.optimizer.alpha = sched.alpha;
  auto r = tracked_run(c, p);
  auto rep = analysis::check_consensus_bound(r, analysis::params_from_run(r, c, opts.clip_b_inf));
  o.require(rep.rigorous, "bound parameters not from clipping");
  o.require(rep.ratio <= 1.0, "empirical consensus above bound");
  o.note("gamma " + fmt("%.4g", r.gamma) + ", alpha " + fmt("%.4g", sched.alpha) + ", empirical " +
         fmt("%.3g", rep.empirical) + ", bound " + fmt("%.3g", rep.bound) + ", ratio " + fmt("%.3g", rep.ratio));
  return o;
}

// Shared settings of the convergence criteria: logistic regression, ring of 4,
// Adam(0.9, 0.999), 3000 local iterations per agent.
constexpr long kTotalSteps = 3000;

engine::RunRecord convergence_run(const problems::ProblemSet& p, int K, bool compressed) {
  auto c = ring4(localopt::Kind::adam, K, kTotalSteps / K);
  c.optimizer.alpha = 0.01;
  c.optimizer.beta1 = 0.9;
  c.optimizer.beta2 = 0.999;
  c.optimizer.delta = 1e-3;
  c.batch_size = 8;
  if (compressed) c.compressor = compression::CompressorSpec::top_k(compression::k_from_fraction(0.3, p.d));
  return tracked_run(c, p);
}

problems::ProblemSet convergence_problem(const problems::PartitionPlan& plan) {
  return problems::make_problem(problems::Kind::logistic, 10, 4, 200, plan, 7);
}

Outcome communication_reduction() {
  Outcome o;
  auto p = convergence_problem(problems::PartitionPlan::iid(7));
  auto base = convergence_run(p, 1, false);
  auto fast = convergence_run(p, 10, true);
  const double loss_gap = std::abs(fast.final_loss() - base.final_loss()) / base.final_loss();
  const double byte_ratio = static_cast<double>(fast.bytes_total) / static_cast<double>(base.bytes_total);
  o.require(fast.total_steps == base.total_steps, "unequal local iterations");
  o.require(loss_gap <= 0.05, "final loss gap");
  o.require(byte_ratio <= 0.05, "byte ratio");
  o.note("baseline loss " + fmt("%.6f", base.final_loss()) + ", K=10 top_k loss " + fmt("%.6f", fast.final_loss()) +
         " (gap " + fmt("%.3f%%", 100 * loss_gap) + "), bytes ratio " + fmt("%.4f", byte_ratio));
  return o;
}

Outcome heterogeneity() {
  Outcome o;
  auto iid = convergence_run(convergence_problem(problems::PartitionPlan::iid(7)), 10, true);
  auto dir = convergence_run(convergence_problem(problems::PartitionPlan::dirichlet(1.0, 7)), 10, true);
  const double gap = std::abs(dir.final_loss() - iid.final_loss()) / iid.final_loss();
  o.require(gap <= 0.10, "Dirichlet loss gap");
  bool finite = true;
  double first_half = 0.0, second_half = 0.0;
  const std::size_t half = dir.rows.size() / 2;
  for (std::size_t t = 0; t < dir.rows.size(); ++t) {
    const double c = dir.rows[t].consensus_err;
    finite = finite && std::isfinite(c);
    (t < half ? first_half : second_half) = std::max(t < half ? first_half : second_half, c);
  }
  o.require(finite, "non-finite consensus error");
  o.require(second_half <= first_half, "consensus error grows over the horizon");
  o.note("IID loss " + fmt("%.6f", iid.final_loss()) + ", Dirichlet(1.0) loss " + fmt("%.6f", dir.final_loss()) +
         " (gap " + fmt("%.3f%%", 100 * gap) + "), max consensus first/second half " + fmt("%.3g", first_half) + "/" +
         fmt("%.3g", second_half));
  return o;
}

Outcome gradient_oracles() {
  Outcome o;
  Rng rng = make_stream(10, {10});
  std::normal_distribution<double> nd;
  double worst_rel = 0.0, worst_z = 0.0;
  for (auto kind : {problems::Kind::least_squares, problems::Kind::logistic, problems::Kind::sigmoid_nonconvex}) {
    auto p = problems::make_problem(kind, 6, 3, 40, problems::PartitionPlan::iid(11), 11);
    for (int rep = 0; rep < 10; ++rep) {
      Vec x(6);
      for (auto& v : x) v = nd(rng);
      for (std::size_t i = 0; i < p.n_agents(); ++i) {
        auto g = problems::local_loss_and_grad(p, i, x).second;
        const double h = 1e-6;
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < 6; ++k) {
          Vec xp = x, xm = x;
          xp[k] += h;
          xm[k] -= h;
          double fd = (problems::local_loss_and_grad(p, i, xp).first - problems::local_loss_and_grad(p, i, xm).first) /
                      (2 * h);
          num += (fd - g[k]) * (fd - g[k]);
          den += g[k] * g[k];
        }
        worst_rel = std::max(worst_rel, std::sqrt(num / den));
      }
    }
    Vec x(6);
    for (auto& v : x) v = 0.5 * nd(rng);
    auto exact = problems::local_loss_and_grad(p, 0, x).second;
    const int draws = 100000;
    Vec sum(6, 0.0), sumsq(6, 0.0);
    for (int r = 0; r < draws; ++r) {
      auto g = problems::stochastic_grad(p, 0, x, 4, rng);
      for (std::size_t k = 0; k < 6; ++k) {
        sum[k] += g[k];
        sumsq[k] += g[k] * g[k];
      }
    }
    for (std::size_t k = 0; k < 6; ++k) {
      double mean = sum[k] / draws;
      double se = std::sqrt((sumsq[k] / draws - mean * mean) / draws);
      double z = std::abs(mean - exact[k]) / se;
      worst_z = std::max(worst_z, z);
      o.require(z <= 3.0, problems::to_string(kind) + " minibatch bias");
    }
  }
  o.require(worst_rel <= 1e-5, "finite-difference mismatch");
  o.note("max relative FD error " + fmt("%.3g", worst_rel) + ", max minibatch |bias|/SE " + fmt("%.2f", worst_z));
  return o;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  Outcome o;
  namespace fs = std::filesystem;
  auto doc = experiment::json::parse(R"({
    "problem": {"kind": "sigmoid_nonconvex", "d": 8, "samples_per_agent": 60, "seed": 3,
                "partition": {"scheme": "dirichlet", "alpha": 0.5}},
    "topology": {"kind": "grid2d", "n": 9},
    "optimizer": {"kind": "amsgrad", "alpha": 0.01, "delta": 0.001},
    "compressor": {"kind": "random_k", "fraction": 0.5},
    "run": {"total_steps": 60, "seed": 99, "batch_size": 2},
    "grid": {"K": [1, 3], "optimizer": ["adam", "amsgrad"]}
  })");
  const fs::path root = fs::temp_directory_path() / ("lodadac_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  std::vector<fs::path> dirs;
  std::ostringstream log;
  int idx = 0;
  for (auto [jobs, workers] : {std::pair{1, 1}, std::pair{1, 1}, std::pair{4, 1}, std::pair{2, 3}}) {
    auto c = experiment::parse_config_json(doc);
    c.run.workers = workers;
    c.output_dir = (root / std::to_string(idx++)).string();
    o.require(experiment::run_experiments(c, log, jobs) == experiment::kOk, "run failed");
    dirs.push_back(c.output_dir);
  }
  int compared = 0;
  for (const auto& e : fs::directory_iterator(dirs[0])) {
    if (e.path().extension() != ".csv") continue;
    const auto ref = read_file(e.path());
    for (std::size_t k = 1; k < dirs.size(); ++k) {
      o.require(ref == read_file(dirs[k] / e.path().filename()), e.path().filename().string());
      ++compared;
    }
  }
  o.require(compared == 12, "expected 4 CSVs in each of 4 output sets");
  fs::remove_all(root);
  o.note(std::to_string(compared) + " CSV pairs byte-identical (repeat, jobs=4, jobs=2 with 3 workers)");
  return o;
}

Outcome average_preservation() {
  Outcome o;
  o.require(g_runs > 0, "no runs recorded");
  o.require(g_avg_drift <= 1e-12, "average changed by mixing");
  o.note("max |avg after - avg before|_inf " + fmt("%.3g", g_avg_drift) + " over " + std::to_string(g_rounds) +
         " rounds in " + std::to_string(g_runs) + " runs");
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> check;
    double time_limit_s;  // 0: no stated limit
  };
  // Average preservation runs last so it covers every run made by the others.
  const std::vector<Criterion> criteria = {
      {1, "compressor contraction", compressor_contraction, 30},
      {2, "mixing validation", mixing_validation, 0},
      {3, "bookkeeping equivalence", bookkeeping_equivalence, 0},
      {5, "z-sequence identity", z_sequence, 0},
      {6, "second-moment accumulator ceilings", lemma_d1, 0},
      {7, "consensus bound", consensus_bound, 60},
      {8, "convergence and communication reduction", communication_reduction, 300},
      {9, "heterogeneity resilience", heterogeneity, 0},
      {10, "gradient oracles", gradient_oracles, 0},
      {11, "determinism", determinism, 0},
      {4, "average preservation", average_preservation, 0},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o.passed = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.time_limit_s > 0 && secs > c.time_limit_s) o.require(false, "runtime " + fmt("%.1fs", secs));
    std::printf("[%s] criterion %2d %-42s %s (%.2fs)\n", o.passed ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                secs);
    std::fflush(stdout);
    failures += o.passed ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
