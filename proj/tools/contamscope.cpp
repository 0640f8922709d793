#include "contamscope/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

using namespace contamscope;

namespace {

struct Flags {
  RunConfig cfg;
  std::string detectors;
  std::string api = "completions";
  std::string embedding_mode = "greedy";
  int timeout_s = 60;
  int retry_backoff_ms = 200;
  bool no_embeddings = false;
  std::uint64_t toy_seed = 0;
  int toy_items = 200;
};

void add_common(CLI::App* app, Flags& f) {
  auto& c = f.cfg;
  app->add_option("--dataset", c.dataset, "Dataset file, one JSON item per line");
  app->add_option("--traces", c.traces, "Trace file, one JSON trace per line");
  app->add_option("--scores", c.scores, "Score file produced by the score subcommand");
  app->add_option("--backend-url", c.backend.base_url,
                  "http(s)://host[:port][/prefix] of an OpenAI-compatible server, or toy:<spec.json>");
  app->add_option("--model", c.backend.model_name, "Model name sent to the backend");
  app->add_option("--api", f.api, "Generation endpoint style")->check(CLI::IsMember({"completions", "chat"}));
  app->add_option("--temperature", c.backend.temperature, "Sampling temperature")->capture_default_str();
  app->add_option("--num-samples", c.backend.num_samples, "Temperature samples per item (N)")
      ->capture_default_str();
  app->add_option("--max-tokens", c.backend.max_tokens, "Generation length limit")->capture_default_str();
  app->add_option("--concurrency", c.backend.max_concurrent_requests, "Maximum in-flight requests")
      ->capture_default_str();
  app->add_option("--retries", c.backend.retry_limit, "Retries per request")->capture_default_str();
  app->add_option("--retry-backoff-ms", f.retry_backoff_ms, "Base retry backoff")->capture_default_str();
  app->add_option("--timeout", f.timeout_s, "Request timeout in seconds")->capture_default_str();
  app->add_option("--top-logprobs", c.backend.top_logprobs, "Alternatives requested per position")
      ->capture_default_str();
  app->add_flag("--no-embeddings", f.no_embeddings, "Do not request embeddings");
  app->add_option("--embedding-mode", f.embedding_mode, "Embedding similarity mode")
      ->check(CLI::IsMember({"greedy", "pairwise"}));
  app->add_option("--min-tokens", c.detectors.dvd.min_tokens_m, "Least-probable tokens per sample (m)")
      ->capture_default_str();
  app->add_option("--k-percent", c.detectors.k_percent, "Min-K% / Min-K%++ fraction")->capture_default_str();
  app->add_option("--cdd-alpha", c.detectors.cdd_alpha, "CDD edit-distance radius")->capture_default_str();
  app->add_option("--detectors", f.detectors, "Comma-separated detector list (default: all)");
  app->add_option("--seed", c.seed, "Run seed")->capture_default_str();
  app->add_option("--seeds", c.seeds, "Seeds for a multi-seed summary")->delimiter(',');
  app->add_option("--sweep-m", c.sweep_m, "m values for the sensitivity sweep")->delimiter(',');
  app->add_option("--bins", c.histogram_bins, "Histogram bins")->capture_default_str();
  app->add_option("--bootstrap", c.bootstrap_replicates, "Bootstrap replicates (0 disables)")
      ->capture_default_str();
  app->add_option("--out", c.out, "Output directory");
  app->add_flag("--force", c.force, "Overwrite existing artifacts");
}

void add_simulate(CLI::App* app, Flags& f) {
  auto& m = f.cfg.simulate.contaminated;
  app->add_option("--pi-m", m.pi_m, "Memory-state probability for contaminated items")->capture_default_str();
  app->add_option("--mu-m", m.mu_m, "Memory-state mean of D")->capture_default_str();
  app->add_option("--sigma-m", m.sigma_m, "Memory-state std of D")->capture_default_str();
  app->add_option("--mu-u", m.mu_u, "Drift-state mean of D")->capture_default_str();
  app->add_option("--sigma-u", m.sigma_u, "Drift-state std of D")->capture_default_str();
  app->add_option("--items", f.cfg.simulate.items, "Total items (half contaminated)")->capture_default_str();
}

void add_make_toy(CLI::App* app, Flags& f) {
  auto& t = f.cfg.toy;
  app->add_option("--items", f.toy_items, "Total items (half contaminated)")->capture_default_str();
  app->add_option("--vocab", t.vocab_size, "Vocabulary size")->capture_default_str();
  app->add_option("--zipf", t.zipf_exponent, "Zipf exponent of the base distribution")->capture_default_str();
  app->add_option("--pi-m", t.pi_m, "Memory-state probability")->capture_default_str();
  app->add_option("--lambda", t.lambda_hi, "Template mass in the memory state")->capture_default_str();
  app->add_option("--toy-temperature", t.temperature, "Drift temperature")->capture_default_str();
  app->add_option("--length", t.response_length, "Response length in tokens")->capture_default_str();
  app->add_option("--toy-seed", f.toy_seed, "Benchmark seed")->capture_default_str();
  app->add_option("--out", f.cfg.out, "Output directory");
  app->add_flag("--force", f.cfg.force, "Overwrite existing artifacts");
}

std::vector<Detector> parse_detector_list(const std::string& list) {
  std::vector<Detector> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_detector(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variance-based contamination detection for language-model benchmarks"};
  app.require_subcommand(1);
  Flags f;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"collect", "Sample traces from a backend"},
      {"score", "Score cached traces with every selected detector"},
      {"eval", "Evaluate scores: AUC table, ROC curves, histograms"},
      {"pipeline", "Collect, score and evaluate in one run"},
      {"sweep", "DVD AUC as a function of m on cached traces"},
      {"simulate", "Synthetic mixture-model scores fed through evaluation"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, f);
    if (name == "simulate") add_simulate(sub, f);
    sub->callback([&f, name = name] { f.cfg.subcommand = name; });
  }
  auto* toy = app.add_subcommand("make-toy", "Write a synthetic toy benchmark and model spec");
  add_make_toy(toy, f);
  toy->callback([&f] { f.cfg.subcommand = "make-toy"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  auto& c = f.cfg;
  try {
    if (!f.detectors.empty()) c.detectors.detectors = parse_detector_list(f.detectors);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::usage);
  }
  c.backend.api_style = f.api == "chat" ? ApiStyle::chat : ApiStyle::completions;
  c.backend.request_timeout = std::chrono::seconds(f.timeout_s);
  c.backend.retry_backoff = std::chrono::milliseconds(f.retry_backoff_ms);
  c.backend.embeddings = !f.no_embeddings;
  c.detectors.embedding_mode =
      f.embedding_mode == "pairwise" ? EmbeddingMode::pairwise_samples : EmbeddingMode::greedy_vs_reference;
  c.backend.sample_embeddings = c.detectors.embedding_mode == EmbeddingMode::pairwise_samples;
  c.toy.seed = f.toy_seed;
  c.toy.n_contaminated = (f.toy_items + 1) / 2;
  c.toy.n_clean = f.toy_items / 2;
  return static_cast<int>(run(c, std::cerr));
}
