#pragma once

// End-to-end orchestration behind the command-line tool: dataset -> traces ->
// scores -> evaluation report, with every artifact written atomically under
// one output directory.

#include "contamscope/backend.hpp"
#include "contamscope/detectors.hpp"
#include "contamscope/eval.hpp"
#include "contamscope/mixture.hpp"
#include "contamscope/toy_lm.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace contamscope {

enum class ExitCode : int {
  success = 0,
  usage = 1,
  backend_failure = 2,
  partial_success = 3,
  degenerate_evaluation = 4,
};

struct SimulateConfig {
  MixtureSpec<double> contaminated{0.5, -1.0, 0.1, -3.0, 0.1};
  int items = 200;
};

struct RunConfig {
  std::string subcommand;
  BackendConfig backend;
  DetectorConfig detectors;
  std::filesystem::path dataset;
  std::filesystem::path traces;
  std::filesystem::path scores;
  std::filesystem::path out;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<int> sweep_m;
  bool force = false;
  int histogram_bins = 40;
  int bootstrap_replicates = 1000;
  SimulateConfig simulate;
  ToyBenchmarkOptions toy;
};

/// Sampling seeds for run seed s start at s * 2^32, so runs never share seeds.
std::uint64_t seed_base_for(std::uint64_t seed);

std::vector<DetectorScore> score_traces(const std::vector<ItemTrace>& traces, const DetectorConfig& cfg);

/// Collect, score and evaluate once per seed on the configured backend.
MultiSeedSummary multi_seed_eval(const RunConfig& cfg, const std::vector<ItemRecord>& items,
                                 const std::vector<std::uint64_t>& seeds);

/// Canonical JSON of the reproducibility-relevant configuration (no secrets,
/// no output paths) and its FNV-1a hash.
std::string canonical_config(const RunConfig& cfg);
std::uint64_t config_hash(const RunConfig& cfg);

/// Writes `content` to dir/name through a temporary file and a rename.
void write_atomic(const std::filesystem::path& dir, const std::string& name, const std::string& content);

/// Subcommand drivers. Diagnostics go to `log`; artifacts go under cfg.out.
ExitCode run_collect(const RunConfig& cfg, std::ostream& log);
ExitCode run_score(const RunConfig& cfg, std::ostream& log);
ExitCode run_eval(const RunConfig& cfg, std::ostream& log);
ExitCode run_pipeline(const RunConfig& cfg, std::ostream& log);
ExitCode run_sweep(const RunConfig& cfg, std::ostream& log);
ExitCode run_simulate(const RunConfig& cfg, std::ostream& log);
ExitCode run_make_toy(const RunConfig& cfg, std::ostream& log);

/// Dispatches on cfg.subcommand and maps exceptions to exit codes.
ExitCode run(const RunConfig& cfg, std::ostream& log);

}  // namespace contamscope
