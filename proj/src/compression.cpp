#include "lodadac/compression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lodadac::compression {

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::identity: return "identity";
    case Kind::top_k: return "top_k";
    case Kind::random_k: return "random_k";
    case Kind::qsgd_rescaled: return "qsgd_rescaled";
    case Kind::gossip_drop: return "gossip_drop";
  }
  return "?";
}

Kind kind_from_string(const std::string& s) {
  if (s == "identity") return Kind::identity;
  if (s == "top_k") return Kind::top_k;
  if (s == "random_k") return Kind::random_k;
  if (s == "qsgd_rescaled") return Kind::qsgd_rescaled;
  if (s == "gossip_drop") return Kind::gossip_drop;
  throw std::invalid_argument("unknown compressor kind: " + s);
}

void CompressorSpec::validate(std::size_t d) const {
  switch (kind) {
    case Kind::identity: return;
    case Kind::top_k:
    case Kind::random_k:
      if (k < 1 || static_cast<std::size_t>(k) > d)
        throw std::invalid_argument(to_string(kind) + ": k=" + std::to_string(k) + " outside [1, " +
                                    std::to_string(d) + "]");
      return;
    case Kind::qsgd_rescaled:
      if (s <= 0) throw std::invalid_argument("qsgd_rescaled: s must be positive");
      return;
    case Kind::gossip_drop:
      if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("gossip_drop: p must lie in (0, 1]");
      return;
  }
}

std::string CompressorSpec::describe() const {
  switch (kind) {
    case Kind::identity: return "identity";
    case Kind::top_k: return "top_k(k=" + std::to_string(k) + ")";
    case Kind::random_k: return "random_k(k=" + std::to_string(k) + ")";
    case Kind::qsgd_rescaled: return "qsgd(s=" + std::to_string(s) + ")";
    case Kind::gossip_drop: {
      char buf[48];
      std::snprintf(buf, sizeof buf, "gossip_drop(p=%g)", p);
      return buf;
    }
  }
  return "?";
}

int k_from_fraction(double fraction, std::size_t d) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("sparsifier fraction must lie in (0, 1]");
  long k = std::lround(fraction * static_cast<double>(d));
  return static_cast<int>(std::clamp<long>(k, 1, static_cast<long>(d)));
}

double eta_of(const CompressorSpec& spec, std::size_t d) {
  spec.validate(d);
  const double dd = static_cast<double>(d);
  switch (spec.kind) {
    case Kind::identity: return 0.0;
    case Kind::top_k:
    case Kind::random_k: return std::sqrt((dd - spec.k) / dd);
    case Kind::qsgd_rescaled: {
      const double s = spec.s;
      const double tau = 1.0 + std::min(dd / (s * s), std::sqrt(dd) / s);
      return std::sqrt(1.0 - 1.0 / tau);
    }
    case Kind::gossip_drop: return std::sqrt(1.0 - spec.p);
  }
  return 0.0;
}

std::int64_t payload_bytes(const CompressorSpec& spec, std::size_t d, const WireFormat& wire) {
  const auto dd = static_cast<std::int64_t>(d);
  switch (spec.kind) {
    case Kind::identity:
    case Kind::qsgd_rescaled:
    case Kind::gossip_drop: return dd * wire.value_width;
    case Kind::top_k:
    case Kind::random_k: return static_cast<std::int64_t>(spec.k) * (wire.value_width + wire.index_width);
  }
  return 0;
}

double expected_payload_bytes(const CompressorSpec& spec, std::size_t d, const WireFormat& wire) {
  double full = static_cast<double>(payload_bytes(spec, d, wire));
  return spec.kind == Kind::gossip_drop ? spec.p * full : full;
}

namespace {

Vec keep_indices(std::span<const double> x, const std::vector<std::size_t>& idx) {
  Vec out(x.size(), 0.0);
  for (auto i : idx) out[i] = x[i];
  return out;
}

Vec top_k_dense(std::span<const double> x, int k) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  // Larger magnitude first; ties go to the lower index.
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](std::size_t a, std::size_t b) {
    double ma = std::abs(x[a]), mb = std::abs(x[b]);
    return ma != mb ? ma > mb : a < b;
  });
  order.resize(k);
  return keep_indices(x, order);
}

Vec random_k_dense(std::span<const double> x, int k, Rng& rng) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(k);
  return keep_indices(x, order);
}

Vec qsgd_dense(std::span<const double> x, int s, Rng& rng) {
  const double d = static_cast<double>(x.size());
  const double tau = 1.0 + std::min(d / (static_cast<double>(s) * s), std::sqrt(d) / s);
  Vec out(x.size(), 0.0);
  const double nrm = std::sqrt(norm_sq(x));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  // Draw xi for every coordinate even when x = 0 so the stream advances by a
  // fixed amount per call.
  for (std::size_t i = 0; i < x.size(); ++i) {
    double xi = unif(rng);
    if (nrm == 0.0 || x[i] == 0.0) continue;
    double level = std::floor(s * std::abs(x[i]) / nrm + xi);
    out[i] = std::copysign(nrm / s * level, x[i]) / tau;
  }
  return out;
}

}  // namespace

CompressedDelta compress(const CompressorSpec& spec, std::span<const double> x, Rng& rng, const WireFormat& wire) {
  if (!all_finite(x)) throw std::invalid_argument("compress: non-finite input");
  spec.validate(x.size());
  CompressedDelta out;
  out.payload_bytes = payload_bytes(spec, x.size(), wire);
  switch (spec.kind) {
    case Kind::identity: out.dense.assign(x.begin(), x.end()); break;
    case Kind::top_k: out.dense = top_k_dense(x, spec.k); break;
    case Kind::random_k: out.dense = random_k_dense(x, spec.k, rng); break;
    case Kind::qsgd_rescaled: out.dense = qsgd_dense(x, spec.s, rng); break;
    case Kind::gossip_drop: {
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      if (unif(rng) < spec.p) {
        out.dense.assign(x.begin(), x.end());
      } else {
        out.dense.assign(x.size(), 0.0);
        out.payload_bytes = 0;
      }
      break;
    }
  }
  return out;
}

bool CertReport::all_passed() const {
  return std::all_of(probes.begin(), probes.end(), [](const ProbeResult& p) { return p.passed; });
}

std::vector<std::pair<std::string, Vec>> probe_vectors(std::size_t d, std::uint64_t seed) {
  std::vector<std::pair<std::string, Vec>> probes;
  Rng rng = make_stream(seed, {0x9e37u});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int g = 0; g < 3; ++g) {
    Vec v(d);
    for (double& e : v) e = normal(rng);
    probes.emplace_back("gaussian_" + std::to_string(g), std::move(v));
  }
  Vec one_hot(d, 0.0);
  one_hot[d / 2] = 1.0;
  probes.emplace_back("one_hot", std::move(one_hot));
  probes.emplace_back("constant", Vec(d, 1.0));
  Vec geo(d);
  for (std::size_t i = 0; i < d; ++i) geo[i] = std::pow(0.5, static_cast<double>(i));
  probes.emplace_back("geometric", std::move(geo));
  Vec alt(d);
  for (std::size_t i = 0; i < d; ++i) alt[i] = (i % 2 ? -1.0 : 1.0) * (1.0 + 0.1 * static_cast<double>(i));
  probes.emplace_back("alternating", std::move(alt));
  return probes;
}

CertReport certify_contraction(const CompressorSpec& spec, std::size_t d, int trials, Rng& rng) {
  if (trials < 100) throw std::invalid_argument("certify_contraction: trials must be >= 100");
  CertReport rep;
  rep.spec = spec;
  rep.d = d;
  rep.eta = eta_of(spec, d);
  const double eta_sq = rep.eta * rep.eta;
  const int draws = spec.randomized() ? trials : 1;
  // Allowance for floating-point rounding when the bound is attained exactly.
  constexpr double kRoundoff = 1e-12;

  for (auto& [name, x] : probe_vectors(d, 20240917u)) {
    const double xx = norm_sq(x);
    double sum = 0.0, sum_sq = 0.0;
    for (int t = 0; t < draws; ++t) {
      auto q = compress(spec, x, rng);
      double err = 0.0;
      for (std::size_t i = 0; i < d; ++i) err += (x[i] - q.dense[i]) * (x[i] - q.dense[i]);
      double r = err / xx;
      sum += r;
      sum_sq += r * r;
    }
    ProbeResult pr;
    pr.probe = name;
    pr.trials = draws;
    pr.mean_ratio = sum / draws;
    if (draws > 1) {
      double var = std::max(0.0, (sum_sq - draws * pr.mean_ratio * pr.mean_ratio) / (draws - 1));
      pr.std_error = std::sqrt(var / draws);
    }
    pr.eta_sq = eta_sq;
    pr.margin = eta_sq + 3.0 * pr.std_error - pr.mean_ratio;
    pr.passed = pr.margin >= -kRoundoff;
    rep.probes.push_back(std::move(pr));
  }
  return rep;
}

}  // namespace lodadac::compression
