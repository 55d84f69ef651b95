#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lodadac/common.hpp"

namespace lodadac::compression {

enum class Kind { identity, top_k, random_k, qsgd_rescaled, gossip_drop };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& s);

/// Byte widths used for payload accounting.
struct WireFormat {
  int value_width = 8;
  int index_width = 4;
};

/// Parameters of an eta-compression operator. `k` applies to the sparsifiers,
/// `s` (quantization levels) to QSGD and `p` (keep probability) to
/// gossip_drop.
struct CompressorSpec {
  Kind kind = Kind::identity;
  int k = 0;
  int s = 1;
  double p = 1.0;

  static CompressorSpec identity() { return {}; }
  static CompressorSpec top_k(int k) { return {Kind::top_k, k, 1, 1.0}; }
  static CompressorSpec random_k(int k) { return {Kind::random_k, k, 1, 1.0}; }
  static CompressorSpec qsgd(int s) { return {Kind::qsgd_rescaled, 0, s, 1.0}; }
  static CompressorSpec gossip_drop(double p) { return {Kind::gossip_drop, 0, 1, p}; }

  bool randomized() const {
    return kind == Kind::random_k || kind == Kind::qsgd_rescaled || kind == Kind::gossip_drop;
  }
  /// Throws std::invalid_argument when the parameters do not fit dimension d.
  void validate(std::size_t d) const;
  std::string describe() const;
};

/// Sparsifier budget from a retained fraction of d coordinates (rounded,
/// at least 1).
int k_from_fraction(double fraction, std::size_t d);

struct CompressedDelta {
  Vec dense;
  std::int64_t payload_bytes = 0;
};

/// Analytic contraction constant eta such that E||x - Q[x]||^2 <= eta^2 ||x||^2.
///   identity        0
///   top_k/random_k  sqrt((d-k)/d)
///   qsgd_rescaled   sqrt(1 - 1/tau), tau = 1 + min(d/s^2, sqrt(d)/s)
///   gossip_drop     sqrt(1 - p)
double eta_of(const CompressorSpec& spec, std::size_t d);

/// Applies the operator. `rng` is consumed only by randomized kinds.
CompressedDelta compress(const CompressorSpec& spec, std::span<const double> x, Rng& rng,
                         const WireFormat& wire = {});

/// Payload of one message for deterministic-size kinds; for gossip_drop this
/// is the size of a kept message.
std::int64_t payload_bytes(const CompressorSpec& spec, std::size_t d, const WireFormat& wire = {});

/// Expected payload of one message (differs from payload_bytes only for
/// gossip_drop).
double expected_payload_bytes(const CompressorSpec& spec, std::size_t d, const WireFormat& wire = {});

struct ProbeResult {
  std::string probe;
  int trials = 0;
  double mean_ratio = 0.0;
  double std_error = 0.0;
  double eta_sq = 0.0;
  /// eta^2 + 3 SE - mean; negative means the empirical check failed.
  double margin = 0.0;
  bool passed = false;
};

struct CertReport {
  CompressorSpec spec;
  std::size_t d = 0;
  double eta = 0.0;
  std::vector<ProbeResult> probes;
  bool all_passed() const;
};

/// Fixed probe set: three standard Gaussian draws plus one-hot, constant,
/// geometric-decay and alternating-sign shapes.
std::vector<std::pair<std::string, Vec>> probe_vectors(std::size_t d, std::uint64_t seed);

/// Monte-Carlo estimate of E||x - Q[x]||^2 / ||x||^2 over `trials` draws per
/// probe (one draw for deterministic kinds), compared against eta_of(spec)^2.
CertReport certify_contraction(const CompressorSpec& spec, std::size_t d, int trials, Rng& rng);

}  // namespace lodadac::compression
