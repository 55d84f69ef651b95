#include "lodadac/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "lodadac/analysis.hpp"

namespace lodadac::experiment {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) { throw ConfigError(path + ": " + msg); }

// Strict object reader: every key must be consumed, otherwise finish() names
// the first unknown one.
class ObjectReader {
public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }
  bool present(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(field(key), "required field is missing");
    return j_.at(key);
  }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  double number(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number()) fail(field(key), "expected a number");
    return v.get<double>();
  }
  double number_or(const std::string& key, double def) { return has(key) ? number(key) : def; }

  long long integer(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number_integer()) fail(field(key), "expected an integer");
    return v.get<long long>();
  }
  long long integer_or(const std::string& key, long long def) { return has(key) ? integer(key) : def; }

  bool boolean_or(const std::string& key, bool def) {
    if (!has(key)) return def;
    const json& v = at(key);
    if (!v.is_boolean()) fail(field(key), "expected true or false");
    return v.get<bool>();
  }
  std::string string(const std::string& key) {
    const json& v = at(key);
    if (!v.is_string()) fail(field(key), "expected a string");
    return v.get<std::string>();
  }
  std::string string_or(const std::string& key, const std::string& def) { return has(key) ? string(key) : def; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(field(it.key()), "unknown key");
  }

private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
auto parse_enum(const std::string& path, const std::string& value, F&& from_string) {
  try {
    return from_string(value);
  } catch (const std::invalid_argument&) {
    fail(path, "unknown value \"" + value + "\"");
  }
}

std::uint64_t seed_of(ObjectReader& r, const std::string& key, std::uint64_t def) {
  if (!r.has(key)) return def;
  const json& v = r.at(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    if (v.get<long long>() < 0) fail(r.field(key), "must be >= 0");
    return static_cast<std::uint64_t>(v.get<long long>());
  }
  fail(r.field(key), "expected a nonnegative integer");
}

ProblemConfig parse_problem(const json& j) {
  ObjectReader r(j, "problem");
  ProblemConfig p;
  p.kind = parse_enum(r.field("kind"), r.string("kind"), problems::kind_from_string);
  long long d = r.integer_or("d", 10);
  if (d < 1) fail(r.field("d"), "must be >= 1");
  p.d = static_cast<std::size_t>(d);
  long long spa = r.integer_or("samples_per_agent", 100);
  if (spa < 1) fail(r.field("samples_per_agent"), "must be >= 1");
  p.samples_per_agent = static_cast<std::size_t>(spa);
  p.seed = seed_of(r, "seed", 0);
  p.options.lambda = r.number_or("lambda", p.options.lambda);
  if (p.options.lambda < 0.0) fail(r.field("lambda"), "must be >= 0");
  p.options.noise = r.number_or("noise", p.options.noise);
  if (p.options.noise < 0.0) fail(r.field("noise"), "must be >= 0");
  p.options.class_separation = r.number_or("class_separation", p.options.class_separation);
  if (r.has("clip_b_inf")) {
    double c = r.number("clip_b_inf");
    if (!(c > 0.0)) fail(r.field("clip_b_inf"), "must be > 0");
    p.options.clip_b_inf = c;
  }
  p.partition = problems::PartitionPlan::iid(p.seed);
  if (r.has("partition")) {
    ObjectReader pr(r.at("partition"), "problem.partition");
    std::string scheme = pr.string_or("scheme", "iid");
    if (scheme == "iid") {
      p.partition.scheme = problems::PartitionPlan::Scheme::iid;
    } else if (scheme == "dirichlet") {
      p.partition.scheme = problems::PartitionPlan::Scheme::dirichlet;
      p.partition.alpha = pr.number("alpha");
      if (!(p.partition.alpha > 0.0)) fail(pr.field("alpha"), "must be > 0");
    } else {
      fail(pr.field("scheme"), "expected \"iid\" or \"dirichlet\"");
    }
    if (scheme == "iid" && pr.has("alpha")) fail(pr.field("alpha"), "only valid for the dirichlet scheme");
    p.partition.seed = seed_of(pr, "seed", p.seed);
    pr.finish();
  }
  r.finish();
  return p;
}

void parse_topology(const json& j, engine::RunConfig& run) {
  ObjectReader r(j, "topology");
  run.topology = parse_enum(r.field("kind"), r.string("kind"), topology::kind_from_string);
  if (run.topology == topology::Kind::custom) {
    long long n_hint = r.integer_or("n", 0);
    try {
      if (r.has("edgelist")) {
        run.custom_graph = topology::load_edge_list(r.string("edgelist"), static_cast<int>(n_hint));
      } else {
        std::vector<std::pair<int, int>> pairs;
        const json& edges = r.at("edges");
        if (!edges.is_array()) fail(r.field("edges"), "expected an array of [i, j] pairs");
        int max_id = -1;
        for (const auto& e : edges) {
          if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer())
            fail(r.field("edges"), "expected an array of [i, j] pairs");
          pairs.emplace_back(e[0].get<int>(), e[1].get<int>());
          max_id = std::max({max_id, pairs.back().first, pairs.back().second});
        }
        run.custom_graph = topology::make_graph(n_hint > 0 ? static_cast<int>(n_hint) : max_id + 1, pairs);
      }
    } catch (const std::invalid_argument& e) {
      fail(r.field("edges"), e.what());
    }
    if (!run.custom_graph->connected()) fail(r.field("edges"), "graph is disconnected");
    run.n = run.custom_graph->n;
  } else {
    long long n = r.integer("n");
    if (n < 2) fail(r.field("n"), "must be >= 2");
    run.n = static_cast<int>(n);
    if (run.topology == topology::Kind::grid2d) {
      int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
      if (side * side != n) fail(r.field("n"), "grid2d requires a perfect square");
    }
  }
  r.finish();
}

void parse_optimizer(const json& j, localopt::OptimizerSpec& opt, std::optional<double>& theta) {
  ObjectReader r(j, "optimizer");
  opt.kind = parse_enum(r.field("kind"), r.string("kind"), localopt::kind_from_string);
  const bool vanilla = opt.kind == localopt::Kind::vanilla_sgd;
  opt.beta1 = r.number_or("beta1", vanilla ? 0.0 : 0.9);
  if (!(opt.beta1 >= 0.0 && opt.beta1 < 1.0)) fail(r.field("beta1"), "must lie in [0, 1)");
  if (vanilla && opt.beta1 != 0.0) fail(r.field("beta1"), "must be 0 for vanilla_sgd");
  if (opt.kind == localopt::Kind::momentum_sgd && opt.beta1 == 0.0) fail(r.field("beta1"), "must lie in (0, 1) for momentum_sgd");
  opt.beta2 = r.number_or("beta2", 0.999);
  if (!(opt.beta2 > 0.0 && opt.beta2 < 1.0)) fail(r.field("beta2"), "must lie in (0, 1)");
  opt.delta = r.number_or("delta", 1e-8);
  if (!(opt.delta > 0.0)) fail(r.field("delta"), "must be > 0");
  if (r.has("theta")) {
    theta = r.number("theta");
    if (!(*theta > 0.0)) fail(r.field("theta"), "must be > 0");
    if (r.has("alpha")) fail(r.field("alpha"), "give either alpha or theta, not both");
  } else {
    opt.alpha = r.number_or("alpha", 1e-3);
    if (!(opt.alpha > 0.0)) fail(r.field("alpha"), "must be > 0");
  }
  r.finish();
}

CompressorConfig parse_compressor(const json& j) {
  ObjectReader r(j, "compressor");
  CompressorConfig c;
  c.kind = parse_enum(r.field("kind"), r.string("kind"), compression::kind_from_string);
  const bool sparse = c.kind == compression::Kind::top_k || c.kind == compression::Kind::random_k;
  if (sparse) {
    if (r.has("k") == r.has("fraction")) fail(r.field("k"), "give exactly one of k or fraction");
    if (r.has("k")) {
      c.k = static_cast<int>(r.integer("k"));
      if (*c.k < 1) fail(r.field("k"), "must be >= 1");
    } else {
      c.fraction = r.number("fraction");
      if (!(*c.fraction > 0.0 && *c.fraction <= 1.0)) fail(r.field("fraction"), "must lie in (0, 1]");
    }
  }
  if (c.kind == compression::Kind::qsgd_rescaled) {
    c.s = static_cast<int>(r.integer_or("s", 1));
    if (c.s < 1) fail(r.field("s"), "must be >= 1");
  }
  if (c.kind == compression::Kind::gossip_drop) {
    c.p = r.number("p");
    if (!(c.p > 0.0 && c.p <= 1.0)) fail(r.field("p"), "must lie in (0, 1]");
  }
  r.finish();
  return c;
}

void parse_run(const json& j, engine::RunConfig& run, std::optional<long>& total_steps) {
  ObjectReader r(j, "run");
  run.K = static_cast<int>(r.integer_or("K", 1));
  if (run.K < 1) fail(r.field("K"), "must be >= 1");
  if (r.has("total_steps")) {
    if (r.has("T")) fail(r.field("total_steps"), "give either T or total_steps, not both");
    total_steps = static_cast<long>(r.integer("total_steps"));
    if (*total_steps < 1) fail(r.field("total_steps"), "must be >= 1");
  }
  run.T = static_cast<long>(r.integer_or("T", 100));
  if (run.T < 1) fail(r.field("T"), "must be >= 1");
  if (r.has("gamma")) {
    run.gamma = r.number("gamma");
    if (!(*run.gamma >= 0.0 && *run.gamma <= 1.0)) fail(r.field("gamma"), "must lie in [0, 1]");
  }
  run.seed = seed_of(r, "seed", 0);
  run.theory_mode = r.boolean_or("theory_mode", false);
  run.strict = r.boolean_or("strict", false);
  run.record_every = static_cast<long>(r.integer_or("record_every", 0));
  if (run.record_every < 0) fail(r.field("record_every"), "must be >= 0");
  long long batch = r.integer_or("batch_size", 1);
  if (batch < 0) fail(r.field("batch_size"), "must be >= 0 (0 = full batch)");
  run.batch_size = static_cast<std::size_t>(batch);
  run.workers = static_cast<int>(r.integer_or("workers", 1));
  if (run.workers < 1) fail(r.field("workers"), "must be >= 1");
  std::string variant = r.string_or("variant", "bookkeeping");
  if (variant == "bookkeeping") run.variant = engine::CommVariant::bookkeeping;
  else if (variant == "direct") run.variant = engine::CommVariant::direct;
  else fail(r.field("variant"), "expected \"bookkeeping\" or \"direct\"");
  run.init_scale = r.number_or("init_scale", 0.0);
  if (run.init_scale < 0.0) fail(r.field("init_scale"), "must be >= 0");
  r.finish();
}

// Seed derivation marker: plans echo their derived seed with this flag off.
bool parse_derive_seed(const json& doc) {
  return !(doc.contains("run") && doc.at("run").is_object() && doc.at("run").contains("derived") &&
           doc.at("run").at("derived").is_boolean() && doc.at("run").at("derived").get<bool>());
}

template <typename T, typename F>
std::vector<T> parse_axis(ObjectReader& r, const std::string& key, F&& item) {
  std::vector<T> out;
  if (!r.has(key)) return out;
  const json& a = r.at(key);
  if (!a.is_array() || a.empty()) fail(r.field(key), "expected a non-empty array");
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(item(a[i], r.field(key) + "[" + std::to_string(i) + "]"));
  return out;
}

GridAxes parse_grid(const json& j) {
  ObjectReader r(j, "grid");
  GridAxes g;
  g.topology = parse_axis<topology::Kind>(r, "topology", [](const json& v, const std::string& p) {
    if (!v.is_string()) fail(p, "expected a string");
    return parse_enum(p, v.get<std::string>(), topology::kind_from_string);
  });
  g.n = parse_axis<int>(r, "n", [](const json& v, const std::string& p) {
    if (!v.is_number_integer() || v.get<int>() < 2) fail(p, "expected an integer >= 2");
    return v.get<int>();
  });
  g.optimizer = parse_axis<localopt::Kind>(r, "optimizer", [](const json& v, const std::string& p) {
    if (!v.is_string()) fail(p, "expected a string");
    return parse_enum(p, v.get<std::string>(), localopt::kind_from_string);
  });
  auto optional_positive = [](const json& v, const std::string& p) -> std::optional<double> {
    if (v.is_null() || (v.is_string() && (v.get<std::string>() == "none" || v.get<std::string>() == "iid")))
      return std::nullopt;
    if (!v.is_number() || !(v.get<double>() > 0.0)) fail(p, "expected a positive number or null");
    return v.get<double>();
  };
  g.partition_alpha = parse_axis<std::optional<double>>(r, "partition_alpha", optional_positive);
  g.K = parse_axis<int>(r, "K", [](const json& v, const std::string& p) {
    if (!v.is_number_integer() || v.get<int>() < 1) fail(p, "expected an integer >= 1");
    return v.get<int>();
  });
  g.top_k = parse_axis<std::optional<double>>(r, "top_k", [&](const json& v, const std::string& p) {
    auto f = optional_positive(v, p);
    if (f && *f > 1.0) fail(p, "fraction must lie in (0, 1]");
    return f;
  });
  r.finish();
  return g;
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::uint64_t derive_seed(std::uint64_t base, std::size_t index) {
  // splitmix64 finalizer over (base, index)
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

json problem_to_json(const ProblemConfig& p) {
  json j;
  j["kind"] = problems::to_string(p.kind);
  j["d"] = p.d;
  j["samples_per_agent"] = p.samples_per_agent;
  j["seed"] = p.seed;
  j["lambda"] = p.options.lambda;
  j["noise"] = p.options.noise;
  j["class_separation"] = p.options.class_separation;
  j["clip_b_inf"] = p.options.clip_b_inf ? json(*p.options.clip_b_inf) : json(nullptr);
  json part;
  if (p.partition.scheme == problems::PartitionPlan::Scheme::iid) {
    part["scheme"] = "iid";
  } else {
    part["scheme"] = "dirichlet";
    part["alpha"] = p.partition.alpha;
  }
  part["seed"] = p.partition.seed;
  j["partition"] = part;
  return j;
}

std::string partition_tag(const problems::PartitionPlan& p) {
  return p.scheme == problems::PartitionPlan::Scheme::iid ? "iid" : "dir" + fmt_g(p.alpha);
}

}  // namespace

compression::CompressorSpec CompressorConfig::resolve(std::size_t d) const {
  compression::CompressorSpec spec;
  spec.kind = kind;
  spec.s = s;
  spec.p = p;
  if (kind == compression::Kind::top_k || kind == compression::Kind::random_k)
    spec.k = k ? *k : compression::k_from_fraction(*fraction, d);
  return spec;
}

std::string CompressorConfig::tag() const {
  switch (kind) {
    case compression::Kind::identity: return "identity";
    case compression::Kind::top_k: return k ? "topk-k" + std::to_string(*k) : "topk" + fmt_g(*fraction);
    case compression::Kind::random_k: return k ? "randk-k" + std::to_string(*k) : "randk" + fmt_g(*fraction);
    case compression::Kind::qsgd_rescaled: return "qsgd-s" + std::to_string(s);
    case compression::Kind::gossip_drop: return "gdrop-p" + fmt_g(p);
  }
  return "?";
}

std::size_t GridAxes::size() const {
  auto m = [](std::size_t s) { return std::max<std::size_t>(s, 1); };
  return m(topology.size()) * m(n.size()) * m(optimizer.size()) * m(partition_alpha.size()) * m(K.size()) *
         m(top_k.size());
}

ExperimentConfig parse_config_json(const json& doc) {
  ObjectReader r(doc, "");
  ExperimentConfig c;
  c.source = doc;
  c.problem = parse_problem(r.at("problem"));
  parse_topology(r.at("topology"), c.run);
  parse_optimizer(r.at("optimizer"), c.run.optimizer, c.theta);
  if (r.has("compressor")) c.compressor = parse_compressor(r.at("compressor"));
  c.run.T = 100;
  if (r.has("run")) {
    // "derived" is only written by config echoes; strip it before strict parsing.
    json run = r.at("run");
    if (run.is_object()) run.erase("derived");
    parse_run(run, c.run, c.total_steps);
  }
  if (r.has("grid")) c.grid = parse_grid(r.at("grid"));
  long long cap = r.integer_or("grid_cap", 512);
  if (cap < 1) fail("grid_cap", "must be >= 1");
  c.grid_cap = static_cast<std::size_t>(cap);
  c.allow_large_grid = r.boolean_or("allow_large_grid", false);
  if (r.has("output")) {
    ObjectReader o(r.at("output"), "output");
    c.output_dir = o.string_or("dir", c.output_dir);
    if (o.has("formats")) {
      const json& f = o.at("formats");
      if (!f.is_array()) fail("output.formats", "expected an array");
      c.write_csv = c.write_json = false;
      for (const auto& v : f) {
        std::string s = v.is_string() ? v.get<std::string>() : "";
        if (s == "csv") c.write_csv = true;
        else if (s == "json") c.write_json = true;
        else fail("output.formats", "expected \"csv\" or \"json\" entries");
      }
    }
    o.finish();
  }
  r.finish();

  if (c.theta && !c.problem.options.clip_b_inf) fail("optimizer.theta", "requires problem.clip_b_inf");
  const bool custom = c.run.topology == topology::Kind::custom;
  if (c.grid && custom && !c.grid->n.empty()) fail("grid.n", "cannot sweep n with a custom topology");
  if (c.grid) {
    for (auto k : c.grid->topology)
      if (k == topology::Kind::custom) fail("grid.topology", "custom graphs cannot be swept");
    if (c.grid->size() > c.grid_cap && !c.allow_large_grid)
      fail("grid", "cross product of " + std::to_string(c.grid->size()) + " runs exceeds grid_cap=" +
                       std::to_string(c.grid_cap) + " (set allow_large_grid to override)");
  }
  // Validate what can be validated before planning.
  if (!c.grid || c.grid->top_k.empty()) {
    try {
      c.compressor.resolve(c.problem.d).validate(c.problem.d);
    } catch (const std::invalid_argument& e) {
      fail("compressor", e.what());
    }
  }
  if (c.run.optimizer.kind == localopt::Kind::matrix_adagrad && c.problem.d > localopt::kMatrixAdagradMaxDim)
    fail("optimizer.kind", "matrix_adagrad supports d <= " + std::to_string(localopt::kMatrixAdagradMaxDim));
  return c;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": malformed JSON: " + e.what());
  }
  return parse_config_json(doc);
}

std::vector<RunPlan> enumerate_runs(const ExperimentConfig& config) {
  const GridAxes axes = config.grid.value_or(GridAxes{});
  if (axes.size() > config.grid_cap && !config.allow_large_grid)
    throw ConfigError("grid: cross product exceeds grid_cap");

  auto or_base = [](const auto& axis, auto base) {
    using T = typename std::decay_t<decltype(axis)>::value_type;
    return axis.empty() ? std::vector<T>{static_cast<T>(base)} : axis;
  };
  const auto topologies = or_base(axes.topology, config.run.topology);
  const auto ns = or_base(axes.n, config.run.n);
  const auto optimizers = or_base(axes.optimizer, config.run.optimizer.kind);
  std::vector<std::optional<double>> alphas = axes.partition_alpha;
  const bool sweep_alpha = !alphas.empty();
  if (!sweep_alpha) alphas.push_back(std::nullopt);
  const auto Ks = or_base(axes.K, config.run.K);
  std::vector<std::optional<double>> topks = axes.top_k;
  const bool sweep_topk = !topks.empty();
  if (!sweep_topk) topks.push_back(std::nullopt);
  const bool derive = parse_derive_seed(config.source);

  std::vector<RunPlan> plans;
  for (auto topo : topologies)
    for (int n : ns)
      for (auto opt : optimizers)
        for (const auto& alpha : alphas)
          for (int K : Ks)
            for (const auto& topk : topks) {
              RunPlan p;
              p.index = plans.size();
              p.problem = config.problem;
              p.compressor = config.compressor;
              p.run = config.run;
              p.theta = config.theta;
              p.run.topology = topo;
              p.run.n = n;
              p.run.K = K;
              if (p.run.optimizer.kind != opt) {
                p.run.optimizer.kind = opt;
                if (opt == localopt::Kind::vanilla_sgd) p.run.optimizer.beta1 = 0.0;
                if (opt == localopt::Kind::momentum_sgd && p.run.optimizer.beta1 == 0.0) p.run.optimizer.beta1 = 0.9;
              }
              if (sweep_alpha) {
                p.problem.partition.scheme =
                    alpha ? problems::PartitionPlan::Scheme::dirichlet : problems::PartitionPlan::Scheme::iid;
                p.problem.partition.alpha = alpha.value_or(1.0);
              }
              if (sweep_topk) {
                p.compressor = CompressorConfig{};
                if (topk) {
                  p.compressor.kind = compression::Kind::top_k;
                  p.compressor.fraction = *topk;
                }
              }
              if (config.total_steps) {
                if (*config.total_steps % K != 0)
                  throw ConfigError("run.total_steps: " + std::to_string(*config.total_steps) +
                                    " is not a multiple of K=" + std::to_string(K));
                p.run.T = *config.total_steps / K;
              }
              if (topo == topology::Kind::grid2d) {
                int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
                if (side * side != n) throw ConfigError("grid: n=" + std::to_string(n) + " is not a perfect square for grid2d");
              }
              p.run.seed = derive ? derive_seed(config.run.seed, p.index) : config.run.seed;
              p.axes = json::object();
              if (!axes.topology.empty()) p.axes["topology"] = topology::to_string(topo);
              if (!axes.n.empty()) p.axes["n"] = n;
              if (!axes.optimizer.empty()) p.axes["optimizer"] = localopt::to_string(opt);
              if (sweep_alpha) p.axes["partition_alpha"] = alpha ? json(*alpha) : json(nullptr);
              if (!axes.K.empty()) p.axes["K"] = K;
              if (sweep_topk) p.axes["top_k"] = topk ? json(*topk) : json(nullptr);

              char idx[16];
              std::snprintf(idx, sizeof idx, "run%03zu", p.index);
              p.name = std::string(idx) + "_K" + std::to_string(K) + "_" + p.compressor.tag() + "_" +
                       localopt::to_string(opt) + "_n" + std::to_string(n) + "_" + topology::to_string(topo) + "_" +
                       partition_tag(p.problem.partition);
              plans.push_back(std::move(p));
            }
  return plans;
}

json plan_to_json(const RunPlan& plan) {
  json j;
  j["problem"] = problem_to_json(plan.problem);
  json topo;
  topo["kind"] = topology::to_string(plan.run.topology);
  topo["n"] = plan.run.n;
  if (plan.run.custom_graph) {
    json edges = json::array();
    for (auto [a, b] : plan.run.custom_graph->edges) edges.push_back({a, b});
    topo["edges"] = edges;
  }
  j["topology"] = topo;
  json opt;
  opt["kind"] = localopt::to_string(plan.run.optimizer.kind);
  opt["beta1"] = plan.run.optimizer.beta1;
  opt["beta2"] = plan.run.optimizer.beta2;
  opt["delta"] = plan.run.optimizer.delta;
  if (plan.theta) opt["theta"] = *plan.theta;
  else opt["alpha"] = plan.run.optimizer.alpha;
  j["optimizer"] = opt;
  json comp;
  comp["kind"] = compression::to_string(plan.compressor.kind);
  if (plan.compressor.k) comp["k"] = *plan.compressor.k;
  if (plan.compressor.fraction) comp["fraction"] = *plan.compressor.fraction;
  if (plan.compressor.kind == compression::Kind::qsgd_rescaled) comp["s"] = plan.compressor.s;
  if (plan.compressor.kind == compression::Kind::gossip_drop) comp["p"] = plan.compressor.p;
  j["compressor"] = comp;
  json run;
  run["K"] = plan.run.K;
  run["T"] = plan.run.T;
  if (plan.run.gamma) run["gamma"] = *plan.run.gamma;
  run["seed"] = plan.run.seed;
  run["derived"] = true;
  run["theory_mode"] = plan.run.theory_mode;
  run["strict"] = plan.run.strict;
  run["record_every"] = plan.run.record_every;
  run["batch_size"] = plan.run.batch_size;
  run["workers"] = plan.run.workers;
  run["variant"] = plan.run.variant == engine::CommVariant::direct ? "direct" : "bookkeeping";
  run["init_scale"] = plan.run.init_scale;
  j["run"] = run;
  return j;
}

std::string problem_hash(const ProblemConfig& problem, int n) {
  json j = problem_to_json(problem);
  j["n"] = n;
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json execute_plan(const RunPlan& plan, std::string* csv_out) {
  json e;
  e["index"] = plan.index;
  e["name"] = plan.name;
  e["axes"] = plan.axes;
  e["problem_hash"] = problem_hash(plan.problem, plan.run.n);
  e["K"] = plan.run.K;
  e["T"] = plan.run.T;
  e["n"] = plan.run.n;
  e["d"] = plan.problem.d;
  e["topology"] = topology::to_string(plan.run.topology);
  e["optimizer"] = localopt::to_string(plan.run.optimizer.kind);
  e["partition"] = partition_tag(plan.problem.partition);
  e["csv"] = plan.name + ".csv";
  try {
    auto problem = problems::make_problem(plan.problem.kind, plan.problem.d, static_cast<std::size_t>(plan.run.n),
                                          plan.problem.samples_per_agent, plan.problem.partition, plan.problem.seed,
                                          plan.problem.options);
    engine::RunConfig run = plan.run;
    run.compressor = plan.compressor.resolve(plan.problem.d);
    e["compressor"] = compression::to_string(run.compressor.kind);
    e["compressor_detail"] = run.compressor.describe();
    json theory = json::object();
    if (plan.theta) {
      auto sched = analysis::stepsize_schedule(run.n, run.T, run.K, *plan.problem.options.clip_b_inf,
                                               run.optimizer.delta, *plan.theta, problems::smoothness(problem));
      run.optimizer.alpha = sched.alpha;
      theory["stepsize"] = {{"theta", *plan.theta},
                            {"alpha", sched.alpha},
                            {"ceiling", sched.ceiling},
                            {"feasible", sched.feasible}};
    }
    auto record = engine::run(run, problem);

    e["rho"] = record.rho;
    e["eta"] = record.eta;
    e["gamma"] = record.gamma;
    e["alpha"] = record.alpha;
    e["smoothness"] = record.smoothness;
    e["rounds"] = record.rounds;
    e["total_steps"] = record.total_steps;
    e["bytes_total"] = record.bytes_total;
    e["bytes_per_link_round"] = record.bytes_per_link_round;
    e["final_loss"] = record.final_loss();
    e["final_grad_norm_sq"] = record.rows.back().grad_norm_sq;
    e["best_grad_norm_sq"] = record.best_grad_norm_sq();
    e["final_consensus_err"] = record.rows.back().consensus_err;
    e["avg_preservation_max"] = record.avg_preservation_max;
    e["gating_violations"] = record.gating_violations;

    const auto tp = analysis::params_from_run(record, run, plan.problem.options.clip_b_inf);
    theory["b_source"] = tp.rigorous ? "clip" : "empirical";
    theory["B"] = tp.B;
    theory["B_inf"] = tp.B_inf;
    theory["gamma_ceiling"] = tp.gamma_ceiling();
    if (plan.problem.options.clip_b_inf) {
      double b_u = tp.B_u();
      theory["alpha_ceiling"] = run.optimizer.delta / (48.0 * record.smoothness * std::sqrt(b_u + run.optimizer.delta));
    }
    if (tp.gamma * (1.0 - tp.rho) > 0.0 && tp.eta < 1.0) {
      auto cb = analysis::check_consensus_bound(record, tp);
      e["cbar"] = cb.cbar;
      theory["consensus_bound"] = {{"empirical", cb.empirical}, {"bound", cb.bound}, {"ratio", cb.ratio},
                                   {"holds", cb.holds},         {"rigorous", cb.rigorous}};
    } else {
      e["cbar"] = nullptr;
    }
    auto d1 = analysis::lemma_d1_check(record, run.optimizer, tp.B_inf);
    theory["lemma_d1"] = {{"measured", d1.measured}, {"ceiling", d1.ceiling}, {"rule", d1.rule}, {"passed", d1.passed}};
    auto a1 = analysis::lemma_a1_check(record, tp.B, tp.B_inf);
    theory["lemma_a1"] = {{"max_m_norm", a1.max_m_norm},
                          {"max_m_inf", a1.max_m_inf},
                          {"max_u_entry", a1.max_u_entry},
                          {"passed", a1.passed()}};
    e["theory"] = theory;
    e["warnings"] = record.warnings;
    e["status"] = "ok";
    if (csv_out) {
      std::ostringstream os;
      engine::write_csv(record, os);
      *csv_out = os.str();
    }
  } catch (const TheoryViolation& ex) {
    e["status"] = "theory_violation";
    e["error"] = ex.what();
  } catch (const std::exception& ex) {
    e["status"] = "failed";
    e["error"] = ex.what();
  }
  return e;
}

int run_experiments(const ExperimentConfig& config, std::ostream& log, int jobs) {
  const auto plans = enumerate_runs(config);
  fs::create_directories(config.output_dir);

  std::vector<json> entries(plans.size());
  std::vector<std::string> csvs(plans.size());
  std::mutex log_mutex;
  auto work = [&](std::size_t i) {
    entries[i] = execute_plan(plans[i], &csvs[i]);
    std::lock_guard<std::mutex> lock(log_mutex);
    log << "[" << (i + 1) << "/" << plans.size() << "] " << plans[i].name << ": " << entries[i]["status"].get<std::string>();
    if (entries[i]["status"] == "ok") log << " final_loss=" << entries[i]["final_loss"].get<double>();
    else log << " (" << entries[i]["error"].get<std::string>() << ")";
    log << '\n';
  };
  const auto nthreads = static_cast<std::size_t>(std::max(1, jobs));
  if (nthreads <= 1) {
    for (std::size_t i = 0; i < plans.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (std::size_t w = 0; w < std::min(nthreads, plans.size()); ++w)
      pool.emplace_back([&, w, stride = std::min(nthreads, plans.size())] {
        try {
          for (std::size_t i = w; i < plans.size(); i += stride) work(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }

  bool any_failed = false, any_theory = false;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const auto status = entries[i]["status"].get<std::string>();
    any_failed = any_failed || status == "failed";
    any_theory = any_theory || status == "theory_violation";
    std::ofstream(fs::path(config.output_dir) / (plans[i].name + ".config.json")) << plan_to_json(plans[i]).dump(2) << '\n';
    if (config.write_csv && status == "ok") std::ofstream(fs::path(config.output_dir) / (plans[i].name + ".csv")) << csvs[i];
  }
  if (config.write_json) {
    json summary;
    summary["format"] = "lodadac-summary/1";
    summary["experiment"] = config.source;
    summary["runs"] = entries;
    std::ofstream(fs::path(config.output_dir) / "summary.json") << summary.dump(2) << '\n';
  }
  if (any_theory) return kTheoryFailure;
  return any_failed ? kRunFailure : kOk;
}

namespace {

struct ReportRow {
  std::string name;
  std::string hash;
  std::string status;
  int K = 0;
  std::string compressor;
  int n = 0;
  double final_loss = NAN;
  double grad = NAN;
  double consensus = NAN;
  double bytes = NAN;
  double total_steps = NAN;
  std::string csv;
};

std::string cell(double v, const char* fmt = "%.6g") {
  if (std::isnan(v)) return "-";
  char buf[40];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

void downsample_csv(const fs::path& src, const fs::path& dst, std::size_t points) {
  std::ifstream in(src);
  if (!in) throw std::runtime_error("cannot read " + src.string());
  std::string header, line;
  std::getline(in, header);
  std::vector<std::string> lines;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  std::ofstream out(dst);
  out << header << '\n';
  if (lines.empty()) return;
  const std::size_t keep = std::max<std::size_t>(2, std::min(points, lines.size()));
  std::size_t last = static_cast<std::size_t>(-1);
  for (std::size_t k = 0; k < keep; ++k) {
    std::size_t idx = (lines.size() - 1) * k / (keep - 1);
    if (idx != last) out << lines[idx] << '\n';
    last = idx;
  }
}

}  // namespace

int report(const std::vector<std::string>& summary_paths, std::ostream& out,
           const std::optional<std::string>& series_dir, std::size_t points) {
  if (summary_paths.empty()) {
    out << "usage: report <summary.json>...\n";
    return kConfigError;
  }
  std::vector<ReportRow> rows;
  for (const auto& path : summary_paths) {
    std::ifstream in(path);
    if (!in) {
      out << "error: cannot open " << path << '\n';
      return kConfigError;
    }
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      out << "error: " << path << " is not valid JSON\n";
      return kConfigError;
    }
    if (!doc.contains("runs") || !doc["runs"].is_array()) {
      out << "error: " << path << " is not a run summary\n";
      return kConfigError;
    }
    const fs::path dir = fs::path(path).parent_path();
    for (const auto& r : doc["runs"]) {
      ReportRow row;
      row.name = r.value("name", "?");
      row.hash = r.value("problem_hash", "");
      row.status = r.value("status", "?");
      row.K = r.value("K", 0);
      row.compressor = r.value("compressor_detail", r.value("compressor", "?"));
      row.n = r.value("n", 0);
      if (row.status == "ok") {
        row.final_loss = r.value("final_loss", NAN);
        row.grad = r.value("final_grad_norm_sq", NAN);
        row.consensus = r.value("final_consensus_err", NAN);
        row.bytes = r.value("bytes_total", NAN);
        row.total_steps = r.value("total_steps", NAN);
      }
      row.csv = (dir / r.value("csv", "")).string();
      rows.push_back(std::move(row));
    }
  }

  std::set<std::string> hashes;
  for (const auto& r : rows) hashes.insert(r.hash);
  if (hashes.size() > 1)
    out << "warning: runs span " << hashes.size() << " distinct problems; relative bytes are computed per problem\n";

  auto baseline_bytes = [&](const std::string& hash) -> double {
    for (const auto& r : rows)
      if (r.hash == hash && r.status == "ok" && r.K == 1 && r.compressor == "identity") return r.bytes;
    return NAN;
  };

  std::size_t name_w = 4;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-*s %4s %-18s %4s %14s %14s %14s %14s %10s\n", static_cast<int>(name_w), "run", "K",
                "compressor", "n", "final_loss", "grad_norm_sq", "consensus_err", "bytes", "rel_bytes");
  out << buf;
  for (const auto& r : rows) {
    double base = baseline_bytes(r.hash);
    double rel = (!std::isnan(base) && base > 0.0) ? r.bytes / base : NAN;
    std::snprintf(buf, sizeof buf, "%-*s %4d %-18s %4d %14s %14s %14s %14s %10s\n", static_cast<int>(name_w),
                  r.name.c_str(), r.K, r.compressor.c_str(), r.n, cell(r.final_loss).c_str(), cell(r.grad).c_str(),
                  cell(r.consensus).c_str(), cell(r.bytes, "%.0f").c_str(), cell(rel, "%.4g").c_str());
    out << buf;
    if (r.status != "ok") out << "  (" << r.status << ")\n";
  }

  if (series_dir) {
    fs::create_directories(*series_dir);
    for (const auto& r : rows) {
      if (r.status != "ok" || !fs::exists(r.csv)) continue;
      downsample_csv(r.csv, fs::path(*series_dir) / (r.name + ".series.csv"), points);
    }
  }
  return kOk;
}

}  // namespace lodadac::experiment
