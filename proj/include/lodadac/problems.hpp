#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lodadac/common.hpp"

namespace lodadac::problems {

enum class Kind { least_squares, logistic, sigmoid_nonconvex };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& s);

/// One agent's private data. Features are row-major (samples x d). For
/// least_squares `targets` holds real responses; for the classification kinds
/// it holds labels in {-1, +1}. `classes` records the binary class id used
/// for partitioning.
struct Shard {
  std::vector<double> features;
  std::vector<double> targets;
  std::vector<int> classes;
  std::size_t size() const { return targets.size(); }
};

struct PartitionPlan {
  enum class Scheme { iid, dirichlet };
  Scheme scheme = Scheme::iid;
  double alpha = 1.0;  // dirichlet concentration
  std::uint64_t seed = 0;

  static PartitionPlan iid(std::uint64_t seed = 0) { return {Scheme::iid, 1.0, seed}; }
  static PartitionPlan dirichlet(double alpha, std::uint64_t seed = 0) { return {Scheme::dirichlet, alpha, seed}; }
};

struct ProblemOptions {
  double lambda = 1e-2;
  /// Std-dev of the additive noise on least_squares responses.
  double noise = 0.1;
  /// Distance between the two class means (classification kinds and the
  /// feature layout of least_squares).
  double class_separation = 1.0;
  /// Elementwise clip applied to every stochastic gradient after averaging.
  std::optional<double> clip_b_inf;
};

/// Global objective f = (1/n) sum_i f_i with f_i the mean per-sample loss over
/// shard i plus (lambda/2)||x||^2. Immutable after construction.
struct ProblemSet {
  Kind kind = Kind::least_squares;
  std::size_t d = 0;
  std::vector<Shard> agents;
  double lambda = 0.0;
  std::optional<double> clip_b_inf;
  /// Planted parameter for least_squares (empty otherwise).
  Vec planted;

  std::size_t n_agents() const { return agents.size(); }
  std::size_t total_samples() const;
};

/// Builds a synthetic problem. Features are drawn from two class-conditional
/// Gaussians (+/- separation/2 along a random unit direction); when d >= 2 the
/// last coordinate is a constant intercept feature. Deterministic in `seed`.
ProblemSet make_problem(Kind kind, std::size_t d, std::size_t n_agents, std::size_t samples_per_agent,
                        const PartitionPlan& partition, std::uint64_t seed, const ProblemOptions& options = {});

/// Per-sample loss and gradient (regularizer excluded).
double sample_loss(Kind kind, std::span<const double> a, double target, std::span<const double> x);
void add_sample_grad(Kind kind, std::span<const double> a, double target, std::span<const double> x, double scale,
                     std::span<double> grad);

/// Mean gradient over `batch` samples drawn with replacement from agent i's
/// shard, plus lambda*x, then clipped to [-B_inf, B_inf] when clipping is set.
/// batch == 0 selects full-batch mode (every sample exactly once).
Vec stochastic_grad(const ProblemSet& problem, std::size_t agent, std::span<const double> x, std::size_t batch,
                    Rng& rng);

/// Exact f_i(x) and grad f_i(x) (no clipping).
std::pair<double, Vec> local_loss_and_grad(const ProblemSet& problem, std::size_t agent, std::span<const double> x);

/// Exact global f(x) and grad f(x).
std::pair<double, Vec> full_grad_and_loss(const ProblemSet& problem, std::span<const double> x);

/// Smoothness constant of f_i: exact lambda_max(A^T A / N_i) + lambda for
/// least_squares; closed-form feature-norm bounds for the other kinds.
double smoothness(const ProblemSet& problem, std::size_t agent);
/// max_i smoothness(problem, i).
double smoothness(const ProblemSet& problem);

/// Assigns each sample to an agent: for every class, proportions
/// p ~ Dirichlet(alpha 1_n) and a categorical draw per sample. Redraws (at
/// most `max_retries` times) until every agent is nonempty.
std::vector<int> dirichlet_partition(std::span<const int> labels, std::size_t n_agents, double alpha,
                                     std::uint64_t seed, int max_retries = 1000);

/// Shuffles and deals samples round-robin.
std::vector<int> iid_partition(std::size_t n_samples, std::size_t n_agents, std::uint64_t seed);

/// CSV with one row per sample: agent_id,label,f0..f{d-1}. `label` is the
/// regression target or the +/-1 class label.
void write_dataset_csv(const ProblemSet& problem, std::ostream& out);
ProblemSet read_dataset_csv(std::istream& in, Kind kind, const ProblemOptions& options = {});

}  // namespace lodadac::problems
