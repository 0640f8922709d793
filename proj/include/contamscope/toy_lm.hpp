#pragma once

// Seedable two-state unigram language model. A contaminated item (one with a
// memorized template) draws a latent state once per sample: memory adherence
// puts lambda_hi on the template's next token, perturbation drift samples the
// tempered base distribution. Clean items always drift.

#include "contamscope/trace.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace contamscope {

struct ToyModelSpec {
  std::vector<std::string> vocabulary;
  Eigen::VectorXd base_unigram;
  std::map<std::string, std::vector<std::string>> templates;
  double pi_m = 0.5;
  double lambda_hi = 0.9;
  double temperature = 0.8;
  // Length of drift-only (clean) responses; templated items answer with the
  // template's length.
  int response_length = 64;
};

enum class GenerationState { memory, drift };

struct ToyEmbedding {
  Eigen::VectorXd vector;
  bool zero_norm = false;
};

class ToyModel {
 public:
  /// Validates the spec; throws InvariantError on violation.
  explicit ToyModel(ToyModelSpec spec);

  struct Generation {
    GenerationSample sample;
    GenerationState state = GenerationState::drift;
    bool truncated = false;
  };

  Generation generate(std::string_view item_id, Decoding decoding, std::uint64_t seed,
                      int max_tokens, int sample_index = 0) const;

  /// Teacher-forced scoring under the per-step state marginal
  /// pi_m * P_memory + (1 - pi_m) * P_drift (P_drift alone for clean items).
  std::vector<TokenEvidence> score_reference(std::string_view item_id,
                                             const std::vector<std::string>& reference) const;
  std::vector<TokenEvidence> score_reference(std::string_view item_id,
                                             std::string_view reference_text) const;

  /// Log-likelihood of a whole reference sequence, computed as the log of the
  /// product of per-step marginal probabilities.
  double sequence_log_likelihood(std::string_view item_id,
                                 const std::vector<std::string>& reference) const;

  /// Bag-of-tokens count vector over the vocabulary.
  ToyEmbedding embed(std::string_view text) const;

  /// Next-token distribution at `position` in the given state.
  Eigen::VectorXd step_distribution(std::string_view item_id, int position,
                                    GenerationState state) const;
  Eigen::VectorXd marginal_distribution(std::string_view item_id, int position) const;
  const Eigen::VectorXd& drift_distribution() const { return drift_; }

  bool has_template(std::string_view item_id) const;
  int natural_length(std::string_view item_id) const;
  std::optional<std::size_t> token_index(std::string_view token) const;
  const ToyModelSpec& spec() const { return spec_; }

  /// Natural-log entries plus the probability-weighted mean and standard
  /// deviation of log-probabilities over the support.
  static TokenEvidence evidence(const Eigen::VectorXd& dist, std::size_t token,
                                std::string token_text);

 private:
  const std::vector<std::size_t>* template_of(std::string_view item_id) const;
  std::string token_text(std::size_t token, int position) const;

  ToyModelSpec spec_;
  Eigen::VectorXd drift_;
  std::unordered_map<std::string, std::size_t> index_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> template_ids_;
};

/// Whitespace tokenization used by the toy backend.
std::vector<std::string> split_tokens(std::string_view text);

ToyModelSpec load_toy_spec(std::istream& in);
ToyModelSpec load_toy_spec(const std::filesystem::path& path);
void save_toy_spec(const ToyModelSpec& spec, std::ostream& out);

/// Synthetic benchmark for the toy backend: Zipf base distribution, reference
/// answers drawn from it, and, for contaminated items, a memorized lexical
/// variant of the reference (every token mapped through a fixed synonym
/// derangement of the vocabulary).
struct ToyBenchmarkOptions {
  int vocab_size = 32;
  double zipf_exponent = 1.5;
  double pi_m = 0.5;
  double lambda_hi = 0.9;
  double temperature = 0.8;
  int response_length = 64;
  int n_contaminated = 100;
  int n_clean = 100;
  std::uint64_t seed = 0;
};

struct ToyBenchmark {
  ToyModelSpec spec;
  std::vector<ItemRecord> items;
};

ToyBenchmark make_toy_benchmark(const ToyBenchmarkOptions& options);

}  // namespace contamscope
