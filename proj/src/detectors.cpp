#include "contamscope/detectors.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace contamscope {

namespace {

DetectorScore make(Detector d, const ItemTrace& trace) {
  DetectorScore s;
  s.detector = d;
  s.item_id = trace.item.item_id;
  s.orientation = orientation_of(d);
  s.label = trace.item.label;
  return s;
}

DetectorScore unavailable(Detector d, const ItemTrace& trace, std::string reason) {
  DetectorScore s = make(d, trace);
  s.unavailable_reason = std::move(reason);
  return s;
}

DetectorScore with_value(Detector d, const ItemTrace& trace, double v) {
  DetectorScore s = make(d, trace);
  s.value = v;
  return s;
}

Eigen::VectorXd logprobs_of(const std::vector<TokenEvidence>& tokens) {
  Eigen::VectorXd lp(static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t i = 0; i < tokens.size(); ++i) lp[static_cast<Eigen::Index>(i)] = tokens[i].logprob;
  return lp;
}

// Ascending-order sum, so loss agrees bit-for-bit with min-k at 100%.
double mean_logprob(const std::vector<TokenEvidence>& tokens) {
  const Eigen::VectorXd lp = logprobs_of(tokens);
  return sum_of_smallest(lp, lp.size()) / static_cast<double>(lp.size());
}

// Reason string when the reference-scored evidence cannot feed a detector.
const char* reference_gap(const ItemTrace& trace) {
  if (!trace.reference_scored) return "reference scoring not available";
  if (trace.reference_scored->empty()) return "empty reference";
  return nullptr;
}

std::vector<std::string> token_texts(const GenerationSample& s) {
  std::vector<std::string> out;
  out.reserve(s.tokens.size());
  for (const auto& t : s.tokens) out.push_back(t.token_text);
  return out;
}

}  // namespace

void validate(const DvdConfig& cfg) {
  if (cfg.min_tokens_m < 1) throw InvariantError("min_tokens_m must be >= 1");
  if (cfg.require_samples < 2) throw InvariantError("require_samples must be >= 2");
}

void validate(const DetectorConfig& cfg) {
  validate(cfg.dvd);
  if (!(cfg.k_percent > 0.0 && cfg.k_percent <= 100.0)) {
    throw InvariantError("k_percent must lie in (0, 100]");
  }
  if (!(cfg.cdd_alpha > 0.0 && cfg.cdd_alpha <= 1.0)) {
    throw InvariantError("cdd_alpha must lie in (0, 1]");
  }
}

Eigen::Index k_percent_count(double k_percent, Eigen::Index length) {
  const double raw = std::ceil(k_percent * static_cast<double>(length) / 100.0);
  return std::clamp<Eigen::Index>(static_cast<Eigen::Index>(raw), 1, std::max<Eigen::Index>(length, 1));
}

std::size_t compressed_size(std::string_view text) {
  uLongf len = compressBound(static_cast<uLong>(text.size()));
  std::string buf(len, '\0');
  const int rc = compress2(reinterpret_cast<Bytef*>(buf.data()), &len,
                           reinterpret_cast<const Bytef*>(text.data()),
                           static_cast<uLong>(text.size()), Z_DEFAULT_COMPRESSION);
  if (rc != Z_OK) throw Error("zlib compression failed");
  return static_cast<std::size_t>(len);
}

SyntheticDifficulty synthetic_difficulty(const GenerationSample& sample, const DvdConfig& cfg) {
  validate(cfg);
  if (sample.tokens.empty()) throw InvariantError("degenerate sample");
  const Eigen::VectorXd lp = logprobs_of(sample.tokens);
  SyntheticDifficulty d;
  d.sample_index = sample.sample_index;
  d.sequence_length = static_cast<int>(lp.size());
  d.tokens_used = std::min(cfg.min_tokens_m, d.sequence_length);
  d.value = synthetic_difficulty(lp, cfg.min_tokens_m);
  return d;
}

Eigen::VectorXd synthetic_difficulties(const ItemTrace& trace, const DvdConfig& cfg) {
  std::vector<double> out;
  for (const auto& s : trace.samples) {
    if (!s.tokens.empty()) out.push_back(synthetic_difficulty(s, cfg).value);
  }
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

DetectorScore dvd_score(const ItemTrace& trace, const DvdConfig& cfg) {
  Eigen::VectorXd d = synthetic_difficulties(trace, cfg);
  if (d.size() < cfg.require_samples) {
    return unavailable(Detector::dvd, trace,
                       "fewer than " + std::to_string(cfg.require_samples) + " usable samples");
  }
  std::sort(d.begin(), d.end());
  return with_value(Detector::dvd, trace, population_variance(d));
}

DetectorScore perplexity_score(const ItemTrace& trace) {
  if (const char* gap = reference_gap(trace)) return unavailable(Detector::perplexity, trace, gap);
  return with_value(Detector::perplexity, trace, std::exp(-mean_logprob(*trace.reference_scored)));
}

DetectorScore loss_score(const ItemTrace& trace) {
  if (const char* gap = reference_gap(trace)) return unavailable(Detector::loss, trace, gap);
  return with_value(Detector::loss, trace, -mean_logprob(*trace.reference_scored));
}

DetectorScore zlib_score(const ItemTrace& trace) {
  if (const char* gap = reference_gap(trace)) return unavailable(Detector::zlib, trace, gap);
  if (trace.item.reference_answer.empty()) return unavailable(Detector::zlib, trace, "empty reference");
  const Eigen::VectorXd lp = logprobs_of(*trace.reference_scored);
  const double nll = -sum_of_smallest(lp, lp.size());
  return with_value(Detector::zlib, trace,
                    nll / static_cast<double>(compressed_size(trace.item.reference_answer)));
}

DetectorScore min_k_score(const ItemTrace& trace, double k_percent) {
  if (const char* gap = reference_gap(trace)) return unavailable(Detector::min_k, trace, gap);
  const Eigen::VectorXd lp = logprobs_of(*trace.reference_scored);
  const Eigen::Index k = k_percent_count(k_percent, lp.size());
  return with_value(Detector::min_k, trace, sum_of_smallest(lp, k) / static_cast<double>(k));
}

DetectorScore min_k_pp_score(const ItemTrace& trace, double k_percent) {
  if (const char* gap = reference_gap(trace)) return unavailable(Detector::min_k_pp, trace, gap);
  const auto& ref = *trace.reference_scored;
  Eigen::VectorXd z(static_cast<Eigen::Index>(ref.size()));
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (!ref[i].pos_mu || !ref[i].pos_sigma) {
      return unavailable(Detector::min_k_pp, trace, "position statistics not available");
    }
    const double sigma = *ref[i].pos_sigma;
    z[static_cast<Eigen::Index>(i)] = sigma < 1e-9 ? 0.0 : (ref[i].logprob - *ref[i].pos_mu) / sigma;
  }
  const Eigen::Index k = k_percent_count(k_percent, z.size());
  return with_value(Detector::min_k_pp, trace, sum_of_smallest(z, k) / static_cast<double>(k));
}

DetectorScore cdd_score(const ItemTrace& trace, double alpha, int require_samples) {
  if (!trace.greedy) return unavailable(Detector::cdd, trace, "greedy sample not available");
  if (static_cast<int>(trace.samples.size()) < require_samples) {
    return unavailable(Detector::cdd, trace,
                       "fewer than " + std::to_string(require_samples) + " usable samples");
  }
  const auto greedy = token_texts(*trace.greedy);
  const double radius = alpha * static_cast<double>(std::max<std::size_t>(1, greedy.size()));
  std::size_t within = 0;
  for (const auto& s : trace.samples) {
    if (static_cast<double>(levenshtein(greedy, token_texts(s))) <= radius) ++within;
  }
  return with_value(Detector::cdd, trace,
                    static_cast<double>(within) / static_cast<double>(trace.samples.size()));
}

DetectorScore embedding_sim_score(const ItemTrace& trace, EmbeddingMode mode) {
  if (mode == EmbeddingMode::pairwise_samples) {
    if (!trace.sample_embeddings || trace.sample_embeddings->size() < 2) {
      return unavailable(Detector::embedding_sim, trace, "sample embeddings not available");
    }
    const auto& e = *trace.sample_embeddings;
    for (const auto& v : e) {
      if (v.squaredNorm() == 0.0) return unavailable(Detector::embedding_sim, trace, "zero-norm");
    }
    std::vector<double> cos;
    for (std::size_t i = 0; i < e.size(); ++i) {
      for (std::size_t j = i + 1; j < e.size(); ++j) cos.push_back(cosine_similarity(e[i], e[j]));
    }
    std::sort(cos.begin(), cos.end());
    const double total = std::accumulate(cos.begin(), cos.end(), 0.0);
    return with_value(Detector::embedding_sim, trace, total / static_cast<double>(cos.size()));
  }
  if (!trace.greedy_embedding || !trace.reference_embedding) {
    return unavailable(Detector::embedding_sim, trace, "embeddings not available");
  }
  const auto& a = *trace.greedy_embedding;
  const auto& b = *trace.reference_embedding;
  if (a.size() != b.size()) return unavailable(Detector::embedding_sim, trace, "dimension mismatch");
  if (a.squaredNorm() == 0.0 || b.squaredNorm() == 0.0) {
    return unavailable(Detector::embedding_sim, trace, "zero-norm");
  }
  return with_value(Detector::embedding_sim, trace, cosine_similarity(a, b));
}

std::vector<DetectorScore> run_all_detectors(const ItemTrace& trace, const DetectorConfig& cfg) {
  validate(cfg);
  std::vector<DetectorScore> out;
  out.reserve(cfg.detectors.size());
  for (Detector d : cfg.detectors) {
    switch (d) {
      case Detector::dvd: out.push_back(dvd_score(trace, cfg.dvd)); break;
      case Detector::perplexity: out.push_back(perplexity_score(trace)); break;
      case Detector::loss: out.push_back(loss_score(trace)); break;
      case Detector::zlib: out.push_back(zlib_score(trace)); break;
      case Detector::min_k: out.push_back(min_k_score(trace, cfg.k_percent)); break;
      case Detector::min_k_pp: out.push_back(min_k_pp_score(trace, cfg.k_percent)); break;
      case Detector::cdd:
        out.push_back(cdd_score(trace, cfg.cdd_alpha, cfg.dvd.require_samples));
        break;
      case Detector::embedding_sim: out.push_back(embedding_sim_score(trace, cfg.embedding_mode)); break;
    }
  }
  return out;
}

}  // namespace contamscope
