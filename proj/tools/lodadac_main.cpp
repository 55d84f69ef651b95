#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lodadac/compression.hpp"
#include "lodadac/experiment.hpp"
#include "lodadac/topology.hpp"

namespace ex = lodadac::experiment;
namespace cmp = lodadac::compression;
namespace topo = lodadac::topology;

namespace {

int cmd_validate(const std::string& path) {
  auto config = ex::parse_config(path);
  auto plans = ex::enumerate_runs(config);
  std::cout << "ok: " << plans.size() << " run(s)\n";
  for (const auto& p : plans) std::cout << "  " << p.name << '\n';
  return ex::kOk;
}

int cmd_run(const std::string& path, const std::optional<std::string>& out, int jobs) {
  auto config = ex::parse_config(path);
  if (out) config.output_dir = *out;
  int code = ex::run_experiments(config, std::cout, jobs);
  std::cout << "artifacts in " << config.output_dir << '\n';
  return code;
}

int cmd_certify(std::size_t d, int trials, std::uint64_t seed) {
  const int k = static_cast<int>(std::max<std::size_t>(1, d / 4));
  const std::vector<cmp::CompressorSpec> specs = {
      cmp::CompressorSpec::identity(), cmp::CompressorSpec::top_k(k),     cmp::CompressorSpec::random_k(k),
      cmp::CompressorSpec::qsgd(1),    cmp::CompressorSpec::qsgd(4),      cmp::CompressorSpec::gossip_drop(0.6)};
  auto rng = lodadac::make_stream(seed, {0xce47});
  bool all = true;
  std::printf("%-22s %-12s %8s %12s %12s %12s %s\n", "compressor", "probe", "trials", "mean_ratio", "eta^2",
              "margin", "result");
  for (const auto& spec : specs) {
    auto rep = cmp::certify_contraction(spec, d, trials, rng);
    for (const auto& p : rep.probes) {
      std::printf("%-22s %-12s %8d %12.6g %12.6g %12.3g %s\n", spec.describe().c_str(), p.probe.c_str(), p.trials,
                  p.mean_ratio, p.eta_sq, p.margin, p.passed ? "PASS" : "FAIL");
    }
    all = all && rep.all_passed();
  }
  return all ? ex::kOk : ex::kTheoryFailure;
}

int cmd_check_topology(const std::string& path, int n) {
  auto graph = topo::load_edge_list(path, n);
  if (!graph.connected()) {
    std::cerr << "error: " << path << ": graph is disconnected\n";
    return ex::kConfigError;
  }
  auto w = topo::metropolis_weights(graph);
  auto rep = topo::validate_mixing(w);
  std::printf("agents %d, edges %zu, rho %.12g\n", graph.n, graph.edges.size(), rep.rho);
  for (const auto& c : rep.checks)
    std::printf("  %-22s %-4s residual %.3g\n", c.name.c_str(), c.passed ? "PASS" : "FAIL", c.residual);
  return rep.all_passed() ? ex::kOk : ex::kTheoryFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized adaptive optimization with local updates and compressed gossip"};
  app.require_subcommand(1);

  std::string config_path;
  auto* validate = app.add_subcommand("validate", "Parse a config and list the runs it expands to");
  validate->add_option("config", config_path, "Experiment config (JSON)")->required();

  std::optional<std::string> out_dir;
  int jobs = 1;
  auto* run = app.add_subcommand("run", "Execute every run of a config");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "Output directory (overrides output.dir)");
  run->add_option("--jobs", jobs, "Runs executed concurrently")->check(CLI::PositiveNumber);

  std::vector<std::string> summaries;
  std::optional<std::string> series_dir;
  std::size_t points = 200;
  auto* report = app.add_subcommand("report", "Compare runs from one or more summary.json files");
  report->add_option("summaries", summaries, "summary.json files");
  report->add_option("--series-out", series_dir, "Write downsampled per-run series here");
  report->add_option("--points", points, "Maximum rows per downsampled series")->check(CLI::Range(2, 1000000));

  std::size_t cert_d = 16;
  int trials = 100000;
  std::uint64_t cert_seed = 1;
  auto* certify = app.add_subcommand("certify-compressors", "Monte-Carlo contraction check of every compressor");
  certify->add_option("--d", cert_d, "Vector dimension")->check(CLI::Range(1, 1 << 20));
  certify->add_option("--trials", trials, "Draws per probe (>= 100)")->check(CLI::Range(100, 100000000));
  certify->add_option("--seed", cert_seed, "Random seed");

  std::string edgelist;
  int topo_n = 0;
  auto* check = app.add_subcommand("check-topology", "Build Metropolis weights for an edge list and validate them");
  check->add_option("edgelist", edgelist, "Edge list file: one \"i j\" pair per line")->required();
  check->add_option("--n", topo_n, "Number of agents (default: max id + 1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ex::kOk : ex::kConfigError;
  }

  try {
    if (*validate) return cmd_validate(config_path);
    if (*run) return cmd_run(config_path, out_dir, jobs);
    if (*report) return ex::report(summaries, std::cout, series_dir, points);
    if (*certify) return cmd_certify(cert_d, trials, cert_seed);
    if (*check) return cmd_check_topology(edgelist, topo_n);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return ex::kConfigError;
  } catch (const lodadac::TheoryViolation& e) {
    std::cerr << "theory violation: " << e.what() << '\n';
    return ex::kTheoryFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ex::kRunFailure;
  }
  return ex::kOk;
}
