#include "lodadac/localopt.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace lodadac::localopt {

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::vanilla_sgd: return "vanilla_sgd";
    case Kind::momentum_sgd: return "momentum_sgd";
    case Kind::amsgrad: return "amsgrad";
    case Kind::adam: return "adam";
    case Kind::adam_mini: return "adam_mini";
    case Kind::avg_adagrad: return "avg_adagrad";
    case Kind::matrix_adagrad: return "matrix_adagrad";
  }
  return "?";
}

Kind kind_from_string(const std::string& s) {
  if (s == "vanilla_sgd") return Kind::vanilla_sgd;
  if (s == "momentum_sgd") return Kind::momentum_sgd;
  if (s == "amsgrad") return Kind::amsgrad;
  if (s == "adam") return Kind::adam;
  if (s == "adam_mini") return Kind::adam_mini;
  if (s == "avg_adagrad") return Kind::avg_adagrad;
  if (s == "matrix_adagrad") return Kind::matrix_adagrad;
  throw std::invalid_argument("unknown optimizer kind: " + s);
}

void OptimizerSpec::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be positive");
  if (!(delta > 0.0) || !std::isfinite(delta)) throw std::invalid_argument("delta must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must lie in [0, 1)");
  if (kind == Kind::vanilla_sgd && beta1 != 0.0) throw std::invalid_argument("beta1 must be 0 for vanilla_sgd");
  if (kind == Kind::momentum_sgd && beta1 == 0.0) throw std::invalid_argument("beta1 must lie in (0, 1) for momentum_sgd");
  if (uses_beta2() && !(beta2 > 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must lie in (0, 1)");
}

double min_beta2_for(long total_steps) {
  double r = std::sqrt(static_cast<double>(total_steps));
  return r / (r + 1.0);
}

OptimizerState OptimizerState::zeros(const OptimizerSpec& spec, std::size_t d) {
  OptimizerState s;
  s.m.assign(d, 0.0);
  if (spec.kind == Kind::matrix_adagrad) {
    if (d > kMatrixAdagradMaxDim)
      throw std::invalid_argument("matrix_adagrad supports d <= " + std::to_string(kMatrixAdagradMaxDim));
    s.u.assign(d * d, 0.0);
    s.u_prev.assign(d * d, 0.0);
    s.u_prev2.assign(d * d, 0.0);
    s.inv_root.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) s.inv_root[i * d + i] = 1.0 / std::sqrt(spec.delta);
  } else {
    s.u.assign(d, 0.0);
    s.u_prev.assign(d, 0.0);
    s.u_prev2.assign(d, 0.0);
  }
  if (spec.kind == Kind::amsgrad) s.u_hat.assign(d, 0.0);
  return s;
}

const Vec& update_first_moment(OptimizerState& state, std::span<const double> g, double beta1) {
  if (g.size() != state.m.size()) throw std::invalid_argument("update_first_moment: dimension mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g[i];
  return state.m;
}

const Vec& update_second_moment(const OptimizerSpec& spec, OptimizerState& state, std::span<const double> g) {
  const std::size_t d = state.m.size();
  if (g.size() != d) throw std::invalid_argument("update_second_moment: dimension mismatch");

  std::swap(state.u_prev2, state.u_prev);
  state.u_prev = state.u;  // u^{t-1}; u is overwritten below
  Vec& u = state.u;
  const double b2 = spec.beta2;
  // Step index t of the update being applied (0-based).
  const double t = static_cast<double>(state.t);

  switch (spec.kind) {
    case Kind::vanilla_sgd:
    case Kind::momentum_sgd:
      break;  // u stays 0
    case Kind::amsgrad:
      for (std::size_t i = 0; i < d; ++i) {
        double gg = g[i] * g[i];
        assert(gg >= 0.0);
        state.u_hat[i] = b2 * state.u_hat[i] + (1.0 - b2) * gg;
        u[i] = std::max(u[i], state.u_hat[i]);
      }
      break;
    case Kind::adam:
      for (std::size_t i = 0; i < d; ++i) u[i] = b2 * u[i] + (1.0 - b2) * g[i] * g[i];
      break;
    case Kind::adam_mini: {
      double mean_sq = norm_sq(g) / static_cast<double>(d);
      for (std::size_t i = 0; i < d; ++i) u[i] = b2 * u[i] + (1.0 - b2) * mean_sq;
      break;
    }
    case Kind::avg_adagrad:
      for (std::size_t i = 0; i < d; ++i) u[i] += (g[i] * g[i] - u[i]) / (t + 1.0);
      break;
    case Kind::matrix_adagrad:
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) u[r * d + c] += (g[r] * g[c] - u[r * d + c]) / (t + 1.0);
      break;
  }

  if (spec.kind == Kind::matrix_adagrad) {
    Vec root = inverse_sqrt_shifted(state.u_prev, d, spec.delta);
    double acc = 0.0;
    for (std::size_t i = 0; i < root.size(); ++i) acc += (state.inv_root[i] - root[i]) * (state.inv_root[i] - root[i]);
    state.inv_sqrt_diff_sum += acc;
    state.inv_root = std::move(root);
  } else if (spec.kind != Kind::vanilla_sgd && spec.kind != Kind::momentum_sgd) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double diff = 1.0 / std::sqrt(state.u_prev2[i] + spec.delta) - 1.0 / std::sqrt(state.u_prev[i] + spec.delta);
      acc += diff * diff;
    }
    state.inv_sqrt_diff_sum += acc;
  }
  return u;
}

Vec inv_sqrt_divisor(const OptimizerState& state, double delta) {
  Vec out(state.u_prev.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / std::sqrt(state.u_prev[i] + delta);
  return out;
}

Vec local_step(const OptimizerState& state, std::span<const double> x, const OptimizerSpec& spec) {
  if (!(spec.delta > 0.0)) throw std::invalid_argument("local_step: delta must be positive");
  const std::size_t d = state.m.size();
  if (x.size() != d) throw std::invalid_argument("local_step: dimension mismatch");
  Vec out(x.begin(), x.end());
  if (spec.kind == Kind::matrix_adagrad) {
    Vec root = inverse_sqrt_shifted(state.u_prev, d, spec.delta);
    for (std::size_t r = 0; r < d; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += root[r * d + c] * state.m[c];
      out[r] -= spec.alpha * s;
    }
  } else {
    for (std::size_t i = 0; i < d; ++i) out[i] -= spec.alpha * state.m[i] / std::sqrt(state.u_prev[i] + spec.delta);
  }
  return out;
}

Vec adaptive_update(const OptimizerSpec& spec, OptimizerState& state, std::span<const double> x,
                    std::span<const double> g) {
  update_first_moment(state, g, spec.beta1);
  update_second_moment(spec, state, g);
  Vec half = local_step(state, x, spec);
  ++state.t;
  return half;
}

void symmetric_eigen(std::span<const double> a, std::size_t d, Vec& eigenvalues, Vec& eigenvectors) {
  if (a.size() != d * d) throw std::invalid_argument("symmetric_eigen: size mismatch");
  Vec m(a.begin(), a.end());
  Vec v(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
  auto at = [d](Vec& mat, std::size_t r, std::size_t c) -> double& { return mat[r * d + c]; };

  double total = 0.0;
  for (double e : m) total += e * e;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = p + 1; q < d; ++q) off += at(m, p, q) * at(m, p, q);
    if (off <= 1e-30 * std::max(total, 1e-300)) break;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        double apq = at(m, p, q);
        if (apq == 0.0) continue;
        double theta = (at(m, q, q) - at(m, p, p)) / (2.0 * apq);
        double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          double mkp = at(m, k, p), mkq = at(m, k, q);
          at(m, k, p) = c * mkp - s * mkq;
          at(m, k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          double mpk = at(m, p, k), mqk = at(m, q, k);
          at(m, p, k) = c * mpk - s * mqk;
          at(m, q, k) = s * mpk + c * mqk;
        }
        for (std::size_t k = 0; k < d; ++k) {
          double vkp = at(v, k, p), vkq = at(v, k, q);
          at(v, k, p) = c * vkp - s * vkq;
          at(v, k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  eigenvalues.resize(d);
  for (std::size_t i = 0; i < d; ++i) eigenvalues[i] = at(m, i, i);
  eigenvectors = std::move(v);
}

Vec inverse_sqrt_shifted(std::span<const double> a, std::size_t d, double delta) {
  Vec evals, evecs;
  symmetric_eigen(a, d, evals, evecs);
  Vec out(d * d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    // PSD input: clamp round-off negatives before the shift.
    double w = 1.0 / std::sqrt(std::max(evals[k], 0.0) + delta);
    for (std::size_t r = 0; r < d; ++r) {
      double vr = evecs[r * d + k] * w;
      for (std::size_t c = 0; c < d; ++c) out[r * d + c] += vr * evecs[c * d + k];
    }
  }
  return out;
}

}  // namespace lodadac::localopt
