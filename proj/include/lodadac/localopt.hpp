#pragma once

#include <string>
#include <vector>

#include "lodadac/common.hpp"

namespace lodadac::localopt {

enum class Kind { vanilla_sgd, momentum_sgd, amsgrad, adam, adam_mini, avg_adagrad, matrix_adagrad };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& s);

/// Largest dimension accepted by matrix_adagrad (dense d x d eigensolves).
inline constexpr std::size_t kMatrixAdagradMaxDim = 64;

struct OptimizerSpec {
  Kind kind = Kind::adam;
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double delta = 1e-8;

  bool uses_beta2() const { return kind == Kind::amsgrad || kind == Kind::adam || kind == Kind::adam_mini; }
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Smallest beta2 admitted by the Adam/Adam-mini analysis for a run of
/// `total_steps` = T*K iterations: sqrt(TK)/(sqrt(TK)+1).
double min_beta2_for(long total_steps);

/// Per-agent optimizer memory. The second moment is kept at three lags:
/// `u` is the newest (u^t after update_second_moment at step t), `u_prev` is
/// u^{t-1} (the divisor of the step at t) and `u_prev2` is u^{t-2}. All start
/// at zero, matching u^{-1} = u^{-2} = 0. For matrix_adagrad the three are
/// row-major d x d matrices.
struct OptimizerState {
  Vec m;
  Vec u;
  Vec u_prev;
  Vec u_prev2;
  Vec u_hat;  // amsgrad only
  long t = 0;  // completed local steps
  /// Running sum over steps of ||1/sqrt(u^{t-2}+delta) - 1/sqrt(u^{t-1}+delta)||^2
  /// (Frobenius norm of the inverse-root difference for matrix_adagrad).
  double inv_sqrt_diff_sum = 0.0;
  /// matrix_adagrad: (U^{t-1} + delta I)^{-1/2} as of the last
  /// update_second_moment, kept to form the next accumulator term.
  Vec inv_root;

  static OptimizerState zeros(const OptimizerSpec& spec, std::size_t d);
  std::size_t dim() const { return m.size(); }
};

/// m <- beta1 m + (1 - beta1) g. Returns the new m.
const Vec& update_first_moment(OptimizerState& state, std::span<const double> g, double beta1);

/// Shifts the lag window and applies the second-moment rule of `spec.kind`.
/// Also advances inv_sqrt_diff_sum by the term for the current step (which
/// depends only on the two lagged moments). Returns the new u.
const Vec& update_second_moment(const OptimizerSpec& spec, OptimizerState& state, std::span<const double> g);

/// x - alpha * m / sqrt(u_prev + delta), or x - alpha (U_prev + delta I)^{-1/2} m
/// for matrix_adagrad.
Vec local_step(const OptimizerState& state, std::span<const double> x, const OptimizerSpec& spec);

/// The divisor vector 1/sqrt(u_prev + delta) used by local_step for diagonal
/// kinds.
Vec inv_sqrt_divisor(const OptimizerState& state, double delta);

/// One full local update for a gradient: first moment, second moment and
/// parameter step. Returns x^{t+1/2} and increments state.t.
Vec adaptive_update(const OptimizerSpec& spec, OptimizerState& state, std::span<const double> x,
                    std::span<const double> g);

/// (A + delta I)^{-1/2} for a symmetric positive semidefinite row-major d x d
/// matrix, by cyclic Jacobi eigendecomposition.
Vec inverse_sqrt_shifted(std::span<const double> a, std::size_t d, double delta);

/// Symmetric eigendecomposition (cyclic Jacobi). Eigenvectors are returned as
/// columns of a row-major d x d matrix.
void symmetric_eigen(std::span<const double> a, std::size_t d, Vec& eigenvalues, Vec& eigenvectors);

}  // namespace lodadac::localopt
