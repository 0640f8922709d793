#pragma once

// DVD and the seven baseline detectors. Every function here is pure: the same
// trace and configuration always produce the same value, bit for bit.

#include "contamscope/stats.hpp"
#include "contamscope/trace.hpp"

#include <Eigen/Core>

#include <cmath>
#include <vector>

namespace contamscope {

struct DvdConfig {
  int min_tokens_m = 20;
  int require_samples = 2;
};

void validate(const DvdConfig& cfg);

struct SyntheticDifficulty {
  int sample_index = 0;
  double value = 0.0;
  int tokens_used = 0;
  int sequence_length = 0;
};

/// (1/T) * sum of the m smallest entries; all entries when T < m.
template <typename Derived>
typename Derived::Scalar synthetic_difficulty(const Eigen::DenseBase<Derived>& logprobs,
                                              Eigen::Index m) {
  using Scalar = typename Derived::Scalar;
  return sum_of_smallest(logprobs, m) / Scalar(logprobs.size());
}

/// Throws InvariantError("degenerate sample") for a zero-token sample.
SyntheticDifficulty synthetic_difficulty(const GenerationSample& sample, const DvdConfig& cfg);

/// Per-sample D values of the usable (non-empty) samples, in sample order.
Eigen::VectorXd synthetic_difficulties(const ItemTrace& trace, const DvdConfig& cfg);

enum class EmbeddingMode { greedy_vs_reference, pairwise_samples };

struct DetectorConfig {
  DvdConfig dvd;
  double k_percent = 20.0;
  double cdd_alpha = 0.05;
  EmbeddingMode embedding_mode = EmbeddingMode::greedy_vs_reference;
  std::vector<Detector> detectors{std::begin(kAllDetectors), std::end(kAllDetectors)};
};

void validate(const DetectorConfig& cfg);

DetectorScore dvd_score(const ItemTrace& trace, const DvdConfig& cfg = {});
DetectorScore perplexity_score(const ItemTrace& trace);
DetectorScore loss_score(const ItemTrace& trace);
DetectorScore zlib_score(const ItemTrace& trace);
DetectorScore min_k_score(const ItemTrace& trace, double k_percent = 20.0);
DetectorScore min_k_pp_score(const ItemTrace& trace, double k_percent = 20.0);
DetectorScore cdd_score(const ItemTrace& trace, double alpha = 0.05, int require_samples = 2);
DetectorScore embedding_sim_score(const ItemTrace& trace,
                                  EmbeddingMode mode = EmbeddingMode::greedy_vs_reference);

/// One record per configured detector; unavailable detectors carry a reason.
std::vector<DetectorScore> run_all_detectors(const ItemTrace& trace, const DetectorConfig& cfg = {});

/// Number of tokens selected by a k% rule: ceil(k/100 * T), at least 1.
Eigen::Index k_percent_count(double k_percent, Eigen::Index length);

/// Byte length of the zlib-compressed text at the default compression level.
std::size_t compressed_size(std::string_view text);

}  // namespace contamscope
