#include "lodadac/problems.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace lodadac::problems {

namespace {

// sup_z |d^2/dz^2 (1 - sigmoid(z))^2| = 0.15406 (attained at sigmoid(z) ~ 0.614).
constexpr double kSigmoidCurvature = 0.155;
constexpr double kLogisticCurvature = 0.25;

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(-z)) without overflow.
double softplus_neg(double z) { return std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

std::span<const double> row(const Shard& s, std::size_t j, std::size_t d) {
  return {s.features.data() + j * d, d};
}

void clip_inplace(Vec& g, const std::optional<double>& b_inf) {
  if (!b_inf) return;
  for (double& v : g) v = std::clamp(v, -*b_inf, *b_inf);
}

}  // namespace

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::least_squares: return "least_squares";
    case Kind::logistic: return "logistic";
    case Kind::sigmoid_nonconvex: return "sigmoid_nonconvex";
  }
  return "?";
}

Kind kind_from_string(const std::string& s) {
  if (s == "least_squares") return Kind::least_squares;
  if (s == "logistic") return Kind::logistic;
  if (s == "sigmoid_nonconvex") return Kind::sigmoid_nonconvex;
  throw std::invalid_argument("unknown problem kind: " + s);
}

std::size_t ProblemSet::total_samples() const {
  std::size_t n = 0;
  for (const auto& a : agents) n += a.size();
  return n;
}

double sample_loss(Kind kind, std::span<const double> a, double target, std::span<const double> x) {
  const double z = dot(a, x);
  switch (kind) {
    case Kind::least_squares: return 0.5 * (z - target) * (z - target);
    case Kind::logistic: return softplus_neg(target * z);
    case Kind::sigmoid_nonconvex: {
      double q = sigmoid(-target * z);  // 1 - sigmoid(y a^T x)
      return q * q;
    }
  }
  return 0.0;
}

void add_sample_grad(Kind kind, std::span<const double> a, double target, std::span<const double> x, double scale,
                     std::span<double> grad) {
  const double z = dot(a, x);
  double coef = 0.0;
  switch (kind) {
    case Kind::least_squares: coef = z - target; break;
    case Kind::logistic: coef = -target * sigmoid(-target * z); break;
    case Kind::sigmoid_nonconvex: {
      double m = target * z;
      double q = sigmoid(-m);
      coef = -2.0 * target * q * q * (1.0 - q);
      break;
    }
  }
  coef *= scale;
  for (std::size_t k = 0; k < a.size(); ++k) grad[k] += coef * a[k];
}

std::vector<int> iid_partition(std::size_t n_samples, std::size_t n_agents, std::uint64_t seed) {
  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_stream(seed, {0x11du});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> assign(n_samples);
  for (std::size_t k = 0; k < n_samples; ++k) assign[order[k]] = static_cast<int>(k % n_agents);
  return assign;
}

std::vector<int> dirichlet_partition(std::span<const int> labels, std::size_t n_agents, double alpha,
                                     std::uint64_t seed, int max_retries) {
  if (!(alpha > 0.0)) throw std::invalid_argument("dirichlet alpha must be positive");
  if (n_agents < 1) throw std::invalid_argument("dirichlet_partition: need at least one agent");
  std::vector<int> classes(labels.begin(), labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  Rng rng = make_stream(seed, {0xd1c4u});
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<int> assign(labels.size(), -1);
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    std::vector<std::size_t> counts(n_agents, 0);
    for (int c : classes) {
      Vec p(n_agents);
      double total = 0.0;
      for (double& v : p) total += (v = gamma(rng));
      if (total <= 0.0) std::fill(p.begin(), p.end(), 1.0);  // all draws underflowed
      std::discrete_distribution<int> pick(p.begin(), p.end());
      for (std::size_t j = 0; j < labels.size(); ++j)
        if (labels[j] == c) ++counts[assign[j] = pick(rng)];
    }
    if (std::all_of(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; })) return assign;
  }
  throw std::runtime_error("dirichlet_partition: could not give every agent a sample after " +
                           std::to_string(max_retries) + " retries");
}

ProblemSet make_problem(Kind kind, std::size_t d, std::size_t n_agents, std::size_t samples_per_agent,
                        const PartitionPlan& partition, std::uint64_t seed, const ProblemOptions& options) {
  if (d < 1) throw std::invalid_argument("problem dimension d must be >= 1");
  if (n_agents < 2) throw std::invalid_argument("problem needs n_agents >= 2");
  if (samples_per_agent < 1) throw std::invalid_argument("samples_per_agent must be >= 1");
  if (partition.scheme == PartitionPlan::Scheme::dirichlet && !(partition.alpha > 0.0))
    throw std::invalid_argument("dirichlet alpha must be positive");
  if (options.lambda < 0.0) throw std::invalid_argument("lambda must be nonnegative");
  if (options.clip_b_inf && !(*options.clip_b_inf > 0.0)) throw std::invalid_argument("clip_b_inf must be positive");

  Rng rng = make_stream(seed, {0x9b0bu, static_cast<std::uint32_t>(kind)});
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n_total = n_agents * samples_per_agent;
  const std::size_t d_feat = d >= 2 ? d - 1 : d;  // last coordinate is the intercept when d >= 2

  Vec direction(d_feat);
  for (double& v : direction) v = normal(rng);
  const double dn = std::sqrt(norm_sq(direction));
  for (double& v : direction) v /= dn;

  ProblemSet p;
  p.kind = kind;
  p.d = d;
  p.lambda = options.lambda;
  p.clip_b_inf = options.clip_b_inf;
  if (kind == Kind::least_squares) {
    p.planted.resize(d);
    for (double& v : p.planted) v = normal(rng);
  }

  std::vector<double> features(n_total * d);
  std::vector<double> targets(n_total);
  std::vector<int> classes(n_total);
  for (std::size_t j = 0; j < n_total; ++j) classes[j] = static_cast<int>(j % 2);
  std::shuffle(classes.begin(), classes.end(), rng);
  for (std::size_t j = 0; j < n_total; ++j) {
    double shift = (classes[j] ? 0.5 : -0.5) * options.class_separation;
    double* a = features.data() + j * d;
    for (std::size_t k = 0; k < d_feat; ++k) a[k] = normal(rng) + shift * direction[k];
    if (d >= 2) a[d - 1] = 1.0;
    if (kind == Kind::least_squares) {
      targets[j] = dot({a, d}, p.planted) + options.noise * normal(rng);
    } else {
      targets[j] = classes[j] ? 1.0 : -1.0;
    }
  }

  std::vector<int> assign = partition.scheme == PartitionPlan::Scheme::iid
                                ? iid_partition(n_total, n_agents, partition.seed)
                                : dirichlet_partition(classes, n_agents, partition.alpha, partition.seed);
  p.agents.resize(n_agents);
  for (std::size_t j = 0; j < n_total; ++j) {
    Shard& s = p.agents[assign[j]];
    s.features.insert(s.features.end(), features.begin() + j * d, features.begin() + (j + 1) * d);
    s.targets.push_back(targets[j]);
    s.classes.push_back(classes[j]);
  }
  return p;
}

Vec stochastic_grad(const ProblemSet& problem, std::size_t agent, std::span<const double> x, std::size_t batch,
                    Rng& rng) {
  if (!all_finite(x)) throw std::invalid_argument("stochastic_grad: non-finite x");
  const Shard& s = problem.agents.at(agent);
  if (s.size() == 0) throw std::logic_error("stochastic_grad: empty shard");
  const std::size_t d = problem.d;
  Vec g(d, 0.0);
  if (batch == 0) {
    const double scale = 1.0 / static_cast<double>(s.size());
    for (std::size_t j = 0; j < s.size(); ++j) add_sample_grad(problem.kind, row(s, j, d), s.targets[j], x, scale, g);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
    const double scale = 1.0 / static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      std::size_t j = pick(rng);
      add_sample_grad(problem.kind, row(s, j, d), s.targets[j], x, scale, g);
    }
  }
  for (std::size_t k = 0; k < d; ++k) g[k] += problem.lambda * x[k];
  clip_inplace(g, problem.clip_b_inf);
  return g;
}

std::pair<double, Vec> local_loss_and_grad(const ProblemSet& problem, std::size_t agent, std::span<const double> x) {
  const Shard& s = problem.agents.at(agent);
  const std::size_t d = problem.d;
  const double scale = 1.0 / static_cast<double>(s.size());
  Vec g(d, 0.0);
  double loss = 0.0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    loss += sample_loss(problem.kind, row(s, j, d), s.targets[j], x);
    add_sample_grad(problem.kind, row(s, j, d), s.targets[j], x, scale, g);
  }
  loss = loss * scale + 0.5 * problem.lambda * norm_sq(x);
  for (std::size_t k = 0; k < d; ++k) g[k] += problem.lambda * x[k];
  return {loss, std::move(g)};
}

std::pair<double, Vec> full_grad_and_loss(const ProblemSet& problem, std::span<const double> x) {
  const double n = static_cast<double>(problem.n_agents());
  double loss = 0.0;
  Vec g(problem.d, 0.0);
  for (std::size_t i = 0; i < problem.n_agents(); ++i) {
    auto [li, gi] = local_loss_and_grad(problem, i, x);
    loss += li / n;
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += gi[k] / n;
  }
  return {loss, std::move(g)};
}

double smoothness(const ProblemSet& problem, std::size_t agent) {
  const Shard& s = problem.agents.at(agent);
  const std::size_t d = problem.d;
  const double inv_n = 1.0 / static_cast<double>(s.size());
  if (problem.kind == Kind::least_squares) {
    // Exact top eigenvalue of the Gram matrix by power iteration.
    Vec gram(d * d, 0.0);
    for (std::size_t j = 0; j < s.size(); ++j) {
      auto a = row(s, j, d);
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) gram[r * d + c] += a[r] * a[c] * inv_n;
    }
    Vec v(d, 1.0), w(d);
    double lambda_max = 0.0;
    for (int it = 0; it < 5000; ++it) {
      for (std::size_t r = 0; r < d; ++r) w[r] = dot({gram.data() + r * d, d}, v);
      double nw = std::sqrt(norm_sq(w));
      if (nw == 0.0) break;
      double next = dot(v, w) / norm_sq(v);
      for (std::size_t r = 0; r < d; ++r) v[r] = w[r] / nw;
      if (std::abs(next - lambda_max) <= 1e-14 * next) {
        lambda_max = next;
        break;
      }
      lambda_max = next;
    }
    return lambda_max + problem.lambda;
  }
  // Hessian of a per-sample loss l(y a^T x) is l''(z) a a^T, so
  // L <= sup|l''| * lambda_max(A^T A / N) <= sup|l''| * ||A||_F^2 / N.
  double frob = 0.0;
  for (double v : s.features) frob += v * v;
  const double curv = problem.kind == Kind::logistic ? kLogisticCurvature : kSigmoidCurvature;
  return curv * frob * inv_n + problem.lambda;
}

double smoothness(const ProblemSet& problem) {
  double L = 0.0;
  for (std::size_t i = 0; i < problem.n_agents(); ++i) L = std::max(L, smoothness(problem, i));
  return L;
}

void write_dataset_csv(const ProblemSet& problem, std::ostream& out) {
  out << "agent_id,label";
  for (std::size_t k = 0; k < problem.d; ++k) out << ",f" << k;
  out << '\n';
  char buf[40];
  for (std::size_t i = 0; i < problem.n_agents(); ++i) {
    const Shard& s = problem.agents[i];
    for (std::size_t j = 0; j < s.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", s.targets[j]);
      out << i << ',' << buf;
      for (double v : row(s, j, problem.d)) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << ',' << buf;
      }
      out << '\n';
    }
  }
}

ProblemSet read_dataset_csv(std::istream& in, Kind kind, const ProblemOptions& options) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("dataset csv: missing header");
  const auto d = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',') - 1);
  if (d < 1) throw std::invalid_argument("dataset csv: header has no feature columns");
  ProblemSet p;
  p.kind = kind;
  p.d = d;
  p.lambda = options.lambda;
  p.clip_b_inf = options.clip_b_inf;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ls, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() != d + 2) throw std::invalid_argument("dataset csv line " + std::to_string(lineno) + ": wrong column count");
    auto agent = static_cast<std::size_t>(vals[0]);
    if (agent >= p.agents.size()) p.agents.resize(agent + 1);
    Shard& s = p.agents[agent];
    s.targets.push_back(vals[1]);
    s.classes.push_back(kind == Kind::least_squares ? 0 : (vals[1] > 0 ? 1 : 0));
    s.features.insert(s.features.end(), vals.begin() + 2, vals.end());
  }
  if (p.agents.size() < 2) throw std::invalid_argument("dataset csv: need at least two agents");
  for (std::size_t i = 0; i < p.agents.size(); ++i)
    if (p.agents[i].size() == 0) throw std::invalid_argument("dataset csv: agent " + std::to_string(i) + " has no samples");
  return p;
}

}  // namespace lodadac::problems
