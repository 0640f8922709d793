#pragma once

// Trace acquisition from a model backend: temperature samples, a greedy
// completion, teacher-forced reference scoring and embeddings, issued with a
// bound on in-flight calls and assembled deterministically.

#include "contamscope/toy_lm.hpp"
#include "contamscope/trace.hpp"

#include <Eigen/Core>

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace contamscope {

/// The backend cannot provide something the run cannot do without.
struct CapabilityError : Error {
  using Error::Error;
};

/// A wire call failed after exhausting its retries.
struct TransportError : Error {
  using Error::Error;
};

enum class DegradedField { no_pos_stats, no_reference_scoring, no_embeddings };
std::string_view to_string(DegradedField f);

enum class ApiStyle { completions, chat };

struct BackendConfig {
  std::string base_url;  // http(s)://host[:port][/prefix] or toy:<spec path>
  std::string model_name;
  std::optional<std::string> api_key;
  double temperature = 0.8;
  int num_samples = 50;
  int max_tokens = 512;
  std::chrono::milliseconds request_timeout{60000};
  int max_concurrent_requests = 4;
  int retry_limit = 3;
  std::optional<std::uint64_t> seed_base;

  ApiStyle api_style = ApiStyle::completions;
  int top_logprobs = 5;
  std::chrono::milliseconds retry_backoff{200};
  bool embeddings = true;
  bool sample_embeddings = false;
};

void validate(const BackendConfig& cfg);

/// Fills api_key from CONTAMSCOPE_API_KEY and an empty base_url from
/// CONTAMSCOPE_BASE_URL.
BackendConfig with_environment(BackendConfig cfg);

class Backend {
 public:
  explicit Backend(BackendConfig cfg);
  virtual ~Backend() = default;
  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;

  const BackendConfig& config() const { return cfg_; }
  virtual std::string identity() const = 0;
  /// True when pos_mu / pos_sigma are estimates rather than exact values.
  virtual bool approximate_pos_stats() const = 0;

  // Each call adds the number of wire requests it issued (retries included)
  // to `requests`, also when it throws.
  virtual GenerationSample generate(const ItemRecord& item, Decoding decoding,
                                    std::optional<std::uint64_t> seed, int sample_index,
                                    int& requests) = 0;
  /// nullopt when the backend cannot score a supplied continuation.
  virtual std::optional<std::vector<TokenEvidence>> score(const ItemRecord& item, int& requests) = 0;
  /// nullopt when the backend has no embeddings endpoint.
  virtual std::optional<std::vector<Eigen::VectorXd>> embed(const std::vector<std::string>& texts,
                                                            int& requests) = 0;

 private:
  BackendConfig cfg_;
};

class ToyBackend final : public Backend {
 public:
  ToyBackend(BackendConfig cfg, ToyModel model);
  std::string identity() const override;
  bool approximate_pos_stats() const override { return false; }
  GenerationSample generate(const ItemRecord& item, Decoding decoding, std::optional<std::uint64_t> seed,
                            int sample_index, int& requests) override;
  std::optional<std::vector<TokenEvidence>> score(const ItemRecord& item, int& requests) override;
  std::optional<std::vector<Eigen::VectorXd>> embed(const std::vector<std::string>& texts,
                                                    int& requests) override;
  const ToyModel& model() const { return model_; }

 private:
  ToyModel model_;
};

/// OpenAI-compatible completions / chat / embeddings client.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendConfig cfg);
  std::string identity() const override;
  bool approximate_pos_stats() const override { return true; }
  GenerationSample generate(const ItemRecord& item, Decoding decoding, std::optional<std::uint64_t> seed,
                            int sample_index, int& requests) override;
  std::optional<std::vector<TokenEvidence>> score(const ItemRecord& item, int& requests) override;
  std::optional<std::vector<Eigen::VectorXd>> embed(const std::vector<std::string>& texts,
                                                    int& requests) override;

 private:
  struct Reply;
  Reply post(const std::string& path, const std::string& body, int& requests);

  std::string origin_;
  std::string prefix_;
};

/// "toy:<path>" builds a ToyBackend from the spec file; anything else is HTTP.
std::unique_ptr<Backend> make_backend(const BackendConfig& cfg);

/// Top-K log-probabilities plus one lumped tail of mass 1 - sum(p):
/// mean and standard deviation of log p over that distribution.
std::pair<double, double> estimate_pos_stats(const std::vector<double>& top_logprobs);

struct SamplingOutcome {
  ItemTrace trace;
  int request_count = 0;
  std::set<DegradedField> degraded_fields;
};

struct ItemFailure {
  std::string item_id;
  std::string error;
};

struct Collection {
  std::vector<SamplingOutcome> outcomes;  // dataset order, failed items omitted
  std::vector<ItemFailure> failures;
  int request_count = 0;
};

// Precondition failures throw InvariantError before any wire call.
std::vector<GenerationSample> sample_generations(Backend& backend, const ItemRecord& item,
                                                 int* requests = nullptr);
GenerationSample greedy_generation(Backend& backend, const ItemRecord& item, int* requests = nullptr);
std::optional<std::vector<TokenEvidence>> score_reference(Backend& backend, const ItemRecord& item,
                                                          int* requests = nullptr);
/// nullopt when embeddings are unavailable; throws CapabilityError on a
/// zero-dimensional or mismatched pair.
std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>> fetch_embeddings(
    Backend& backend, const std::string& a, const std::string& b, int* requests = nullptr);

/// Throws on any failure; use collect_traces for item-level isolation.
SamplingOutcome collect_trace(Backend& backend, const ItemRecord& item);

/// Item failures (transport, invariant) are recorded and the run continues;
/// CapabilityError aborts the whole collection.
Collection collect_traces(Backend& backend, const std::vector<ItemRecord>& items);

/// Runs task(0..count-1) on at most `workers` threads. The first exception
/// stops dispatch of further tasks and is rethrown after all workers join.
void run_bounded(std::size_t count, int workers, const std::function<void(std::size_t)>& task);

}  // namespace contamscope
