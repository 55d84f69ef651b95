#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lodadac {

using Vec = std::vector<double>;

/// Random stream owned by one agent (or one test harness). mt19937_64 output is
/// fixed by the standard, so seeding is reproducible everywhere.
using Rng = std::mt19937_64;

/// Raised for invalid user configuration; carries the offending field path
/// when one is known.
class ConfigError : public std::invalid_argument {
public:
  explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Raised by strict theory-mode runs when a step-size condition is violated.
class TheoryViolation : public std::runtime_error {
public:
  explicit TheoryViolation(const std::string& msg) : std::runtime_error(msg) {}
};

/// Derives an independent stream from a base seed and a tuple of tags
/// (agent index, purpose, ...).
inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint32_t> tags) {
  std::vector<std::uint32_t> words;
  words.push_back(static_cast<std::uint32_t>(seed & 0xffffffffu));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  words.insert(words.end(), tags.begin(), tags.end());
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm_sq(std::span<const double> a) { return dot(a, a); }

inline double norm_inf(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, v < 0 ? -v : v);
  return m;
}

inline bool all_finite(std::span<const double> a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace lodadac
