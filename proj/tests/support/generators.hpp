#pragma once

// Hand-rolled random generators for property tests.

#include "contamscope/trace.hpp"

#include <Eigen/Core>

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace contamscope::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::mt19937_64& rng() { return rng_; }

  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng_); }

  std::string text(int max_len) {
    static const std::vector<std::string> pieces{"a", "b", "Z", "0", "\"", "\\", "\n", "\t", "é", "中",
                                                 "😀", "{", "}", ",", ":", "/", "\x01"};
    std::string s;
    const int n = integer(0, max_len);
    for (int i = 0; i < n; ++i) s += pieces[static_cast<std::size_t>(integer(0, static_cast<int>(pieces.size()) - 1))];
    return s;
  }

  std::string nonempty_text(int max_len) {
    std::string s = text(max_len);
    return s.empty() ? "x" : s;
  }

  // Finite, <= 0, and biased toward values that stress decimal round-trips.
  double logprob() {
    switch (integer(0, 5)) {
      case 0: return 0.0;
      case 1: return -real(0.0, 1e-12);
      case 2: return -std::exp(real(-700.0, 6.0));
      case 3: return -std::nextafter(1.0 / 3.0, 1.0);
      default: return -real(0.0, 30.0);
    }
  }

  TokenEvidence token(bool with_stats) {
    TokenEvidence t;
    t.token_text = text(4);
    t.logprob = logprob();
    if (with_stats) {
      t.pos_mu = -real(0.0, 12.0);
      t.pos_sigma = coin(0.1) ? 0.0 : real(0.0, 5.0);
    }
    return t;
  }

  GenerationSample sample(int index, Decoding d, double temperature, bool with_stats) {
    GenerationSample s;
    s.sample_index = index;
    s.decoding = d;
    if (d == Decoding::temperature) {
      s.temperature = temperature;
      if (coin()) s.seed = rng_();
    }
    const int n = integer(0, 12);
    for (int i = 0; i < n; ++i) s.tokens.push_back(token(with_stats));
    s.text = detokenize(s.tokens);
    return s;
  }

  Eigen::VectorXd vector(Eigen::Index dim) {
    Eigen::VectorXd v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = real(-1e3, 1e3);
    return v;
  }

  ItemTrace trace(int id) {
    ItemTrace t;
    t.item.item_id = "item-" + std::to_string(id) + text(3);
    t.item.prompt = nonempty_text(20);
    t.item.reference_answer = nonempty_text(20);
    t.item.label = coin() ? Label::contaminated : Label::clean;
    if (coin()) t.item.domain_tag = text(6);
    const bool stats = coin(0.7);
    const double temperature = real(0.05, 2.0);
    const int n = integer(0, 6);
    for (int j = 0; j < n; ++j) t.samples.push_back(sample(j, Decoding::temperature, temperature, stats));
    if (coin(0.8)) t.greedy = sample(0, Decoding::greedy, 0.0, stats);
    if (coin(0.8)) {
      std::vector<TokenEvidence> ref;
      const int k = integer(1, 10);
      for (int i = 0; i < k; ++i) ref.push_back(token(stats));
      t.reference_scored = ref;
    }
    if (coin(0.6)) {
      const Eigen::Index dim = integer(1, 8);
      t.greedy_embedding = vector(dim);
      t.reference_embedding = vector(dim);
    }
    if (coin(0.2) && n > 0) {
      std::vector<Eigen::VectorXd> e;
      for (int j = 0; j < n; ++j) e.push_back(vector(3));
      t.sample_embeddings = e;
    }
    return t;
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace contamscope::testing
