#include "contamscope/backend.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace contamscope {

std::string_view to_string(DegradedField f) {
  switch (f) {
    case DegradedField::no_pos_stats: return "no_pos_stats";
    case DegradedField::no_reference_scoring: return "no_reference_scoring";
    case DegradedField::no_embeddings: return "no_embeddings";
  }
  return "unknown";
}

void validate(const BackendConfig& cfg) {
  if (cfg.base_url.empty()) throw InvariantError("base_url is required");
  if (!(cfg.temperature > 0.0)) throw InvariantError("temperature must be > 0");
  if (cfg.num_samples < 2) throw InvariantError("num_samples must be >= 2");
  if (cfg.max_tokens < 1) throw InvariantError("max_tokens must be >= 1");
  if (cfg.max_concurrent_requests < 1) throw InvariantError("max_concurrent_requests must be >= 1");
  if (cfg.retry_limit < 0) throw InvariantError("retry_limit must be >= 0");
  if (cfg.top_logprobs < 0) throw InvariantError("top_logprobs must be >= 0");
}

BackendConfig with_environment(BackendConfig cfg) {
  if (!cfg.api_key) {
    if (const char* key = std::getenv("CONTAMSCOPE_API_KEY"); key && *key) cfg.api_key = key;
  }
  if (cfg.base_url.empty()) {
    if (const char* url = std::getenv("CONTAMSCOPE_BASE_URL"); url && *url) cfg.base_url = url;
  }
  return cfg;
}

Backend::Backend(BackendConfig cfg) : cfg_(std::move(cfg)) { validate(cfg_); }

ToyBackend::ToyBackend(BackendConfig cfg, ToyModel model)
    : Backend(std::move(cfg)), model_(std::move(model)) {}

std::string ToyBackend::identity() const { return config().base_url; }

GenerationSample ToyBackend::generate(const ItemRecord& item, Decoding decoding,
                                      std::optional<std::uint64_t> seed, int sample_index,
                                      int& requests) {
  ++requests;
  return model_
      .generate(item.item_id, decoding, seed.value_or(static_cast<std::uint64_t>(sample_index)),
                config().max_tokens, sample_index)
      .sample;
}

std::optional<std::vector<TokenEvidence>> ToyBackend::score(const ItemRecord& item, int& requests) {
  ++requests;
  return model_.score_reference(item.item_id, std::string_view(item.reference_answer));
}

std::optional<std::vector<Eigen::VectorXd>> ToyBackend::embed(const std::vector<std::string>& texts,
                                                              int& requests) {
  ++requests;
  std::vector<Eigen::VectorXd> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(model_.embed(t).vector);
  return out;
}

std::unique_ptr<Backend> make_backend(const BackendConfig& cfg) {
  constexpr std::string_view scheme = "toy:";
  if (cfg.base_url.rfind(scheme, 0) == 0) {
    const std::string path = cfg.base_url.substr(scheme.size());
    return std::make_unique<ToyBackend>(cfg, ToyModel(load_toy_spec(std::filesystem::path(path))));
  }
  return std::make_unique<HttpBackend>(cfg);
}

std::pair<double, double> estimate_pos_stats(const std::vector<double>& top_logprobs) {
  double mass = 0.0;
  for (double lp : top_logprobs) mass += std::exp(lp);
  const double tail = std::max(0.0, 1.0 - mass);
  const double total = mass + tail;
  double mu = 0.0;
  for (double lp : top_logprobs) mu += std::exp(lp) * lp;
  if (tail > 0.0) mu += tail * std::log(tail);
  mu /= total;
  double var = 0.0;
  for (double lp : top_logprobs) var += std::exp(lp) * (lp - mu) * (lp - mu);
  if (tail > 0.0) var += tail * (std::log(tail) - mu) * (std::log(tail) - mu);
  return {mu, std::sqrt(var / total)};
}

void run_bounded(std::size_t count, int workers, const std::function<void(std::size_t)>& task) {
  if (count == 0) return;
  const auto n_workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(workers, 1)));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr first;
  std::mutex first_mutex;
  auto worker = [&] {
    for (;;) {
      if (stop.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(first_mutex);
        if (!first) first = std::current_exception();
        stop = true;
      }
    }
  };
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> threads;
    threads.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);
  }
  if (first) std::rethrow_exception(first);
}

namespace {

std::optional<std::uint64_t> sample_seed(const BackendConfig& cfg, int j) {
  if (!cfg.seed_base) return std::nullopt;
  return *cfg.seed_base + static_cast<std::uint64_t>(j);
}

void check_item(const ItemRecord& item) {
  validate(item);
}

bool lacks_pos_stats(const std::vector<TokenEvidence>& tokens) {
  for (const auto& t : tokens) {
    if (!t.pos_mu || !t.pos_sigma) return true;
  }
  return false;
}

std::set<DegradedField> degraded_of(const ItemTrace& t) {
  std::set<DegradedField> out;
  bool no_stats = t.greedy && lacks_pos_stats(t.greedy->tokens);
  for (const auto& s : t.samples) no_stats = no_stats || lacks_pos_stats(s.tokens);
  if (t.reference_scored) no_stats = no_stats || lacks_pos_stats(*t.reference_scored);
  if (no_stats) out.insert(DegradedField::no_pos_stats);
  if (!t.reference_scored) out.insert(DegradedField::no_reference_scoring);
  if (!t.greedy_embedding || !t.reference_embedding) out.insert(DegradedField::no_embeddings);
  return out;
}

void check_embeddings(const std::vector<Eigen::VectorXd>& v, std::size_t expected) {
  if (v.size() != expected) throw CapabilityError("embeddings endpoint returned the wrong number of vectors");
  for (const auto& e : v) {
    if (e.size() == 0) throw CapabilityError("embeddings endpoint returned a zero-dimensional vector");
    if (e.size() != v.front().size()) throw CapabilityError("embedding dimension mismatch");
  }
}

// Per-item slots filled by independent tasks; assembled once all are done.
struct ItemWork {
  std::vector<std::optional<GenerationSample>> samples;
  std::optional<GenerationSample> greedy;
  std::optional<std::vector<TokenEvidence>> reference;
  std::optional<std::vector<Eigen::VectorXd>> embeddings;
  std::vector<int> requests;  // one slot per task
  std::vector<std::string> errors;
};

}  // namespace

std::vector<GenerationSample> sample_generations(Backend& backend, const ItemRecord& item, int* requests) {
  check_item(item);
  const auto& cfg = backend.config();
  const auto n = static_cast<std::size_t>(cfg.num_samples);
  std::vector<std::optional<GenerationSample>> slots(n);
  std::vector<int> counts(n, 0);
  try {
    run_bounded(n, cfg.max_concurrent_requests, [&](std::size_t j) {
      const int idx = static_cast<int>(j);
      slots[j] = backend.generate(item, Decoding::temperature, sample_seed(cfg, idx), idx, counts[j]);
    });
  } catch (...) {
    if (requests) for (int c : counts) *requests += c;
    throw;
  }
  std::vector<GenerationSample> out;
  out.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (requests) *requests += counts[j];
    out.push_back(std::move(*slots[j]));
  }
  return out;
}

GenerationSample greedy_generation(Backend& backend, const ItemRecord& item, int* requests) {
  check_item(item);
  int local = 0;
  try {
    auto g = backend.generate(item, Decoding::greedy, std::nullopt, 0, local);
    if (requests) *requests += local;
    return g;
  } catch (...) {
    if (requests) *requests += local;
    throw;
  }
}

std::optional<std::vector<TokenEvidence>> score_reference(Backend& backend, const ItemRecord& item,
                                                          int* requests) {
  check_item(item);
  int local = 0;
  try {
    auto r = backend.score(item, local);
    if (requests) *requests += local;
    return r;
  } catch (...) {
    if (requests) *requests += local;
    throw;
  }
}

std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>> fetch_embeddings(
    Backend& backend, const std::string& a, const std::string& b, int* requests) {
  if (a.empty() || b.empty()) throw InvariantError("embedding texts must be non-empty");
  int local = 0;
  std::optional<std::vector<Eigen::VectorXd>> v;
  try {
    v = backend.embed({a, b}, local);
  } catch (...) {
    if (requests) *requests += local;
    throw;
  }
  if (requests) *requests += local;
  if (!v) return std::nullopt;
  check_embeddings(*v, 2);
  return std::make_pair((*v)[0], (*v)[1]);
}

Collection collect_traces(Backend& backend, const std::vector<ItemRecord>& items) {
  const auto& cfg = backend.config();
  const auto n_samples = static_cast<std::size_t>(cfg.num_samples);
  const std::size_t per_item = n_samples + 2;  // samples, greedy, reference
  std::vector<ItemWork> work(items.size());
  std::vector<bool> precondition_ok(items.size(), true);
  std::vector<std::string> precondition_error(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    work[i].samples.resize(n_samples);
    work[i].requests.assign(per_item + 1, 0);
    work[i].errors.resize(per_item + 1);
    try {
      check_item(items[i]);
    } catch (const Error& e) {
      precondition_ok[i] = false;
      precondition_error[i] = e.what();
    }
  }

  auto guarded = [](std::string& error, auto&& fn) {
    try {
      fn();
    } catch (const CapabilityError&) {
      throw;
    } catch (const std::exception& e) {
      error = e.what();
    }
  };

  run_bounded(items.size() * per_item, cfg.max_concurrent_requests, [&](std::size_t t) {
    const std::size_t i = t / per_item, k = t % per_item;
    if (!precondition_ok[i]) return;
    ItemWork& w = work[i];
    guarded(w.errors[k], [&] {
      if (k < n_samples) {
        const int idx = static_cast<int>(k);
        w.samples[k] = backend.generate(items[i], Decoding::temperature, sample_seed(cfg, idx), idx,
                                        w.requests[k]);
      } else if (k == n_samples) {
        w.greedy = backend.generate(items[i], Decoding::greedy, std::nullopt, 0, w.requests[k]);
      } else {
        w.reference = backend.score(items[i], w.requests[k]);
      }
    });
  });

  auto failed = [&](std::size_t i) {
    if (!precondition_ok[i]) return true;
    for (std::size_t k = 0; k < per_item; ++k) {
      if (!work[i].errors[k].empty()) return true;
    }
    return false;
  };

  if (cfg.embeddings) {
    run_bounded(items.size(), cfg.max_concurrent_requests, [&](std::size_t i) {
      if (failed(i)) return;
      ItemWork& w = work[i];
      std::vector<std::string> texts{w.greedy->text, items[i].reference_answer};
      if (cfg.sample_embeddings) {
        for (const auto& s : w.samples) texts.push_back(s->text);
      }
      for (const auto& t : texts) {
        if (t.empty()) return;
      }
      guarded(w.errors[per_item], [&] {
        w.embeddings = backend.embed(texts, w.requests[per_item]);
        if (w.embeddings) check_embeddings(*w.embeddings, texts.size());
      });
    });
  }

  Collection out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    ItemWork& w = work[i];
    int requests = 0;
    for (int c : w.requests) requests += c;
    out.request_count += requests;
    std::string error = precondition_error[i];
    for (const auto& e : w.errors) {
      if (error.empty() && !e.empty()) error = e;
    }
    if (error.empty()) {
      SamplingOutcome o;
      o.request_count = requests;
      ItemTrace& t = o.trace;
      t.item = items[i];
      for (auto& s : w.samples) t.samples.push_back(std::move(*s));
      t.greedy = std::move(w.greedy);
      t.reference_scored = std::move(w.reference);
      if (w.embeddings) {
        t.greedy_embedding = (*w.embeddings)[0];
        t.reference_embedding = (*w.embeddings)[1];
        if (cfg.sample_embeddings) t.sample_embeddings.emplace(w.embeddings->begin() + 2, w.embeddings->end());
      }
      if (t.greedy && detokenize(t.greedy->tokens) != t.greedy->text) t.relaxed_detokenization = true;
      for (const auto& s : t.samples) {
        if (detokenize(s.tokens) != s.text) t.relaxed_detokenization = true;
      }
      try {
        validate(t);
        o.degraded_fields = degraded_of(t);
        out.outcomes.push_back(std::move(o));
        continue;
      } catch (const InvariantError& e) {
        error = e.what();
      }
    }
    out.failures.push_back({items[i].item_id, error});
  }
  return out;
}

SamplingOutcome collect_trace(Backend& backend, const ItemRecord& item) {
  check_item(item);
  Collection c = collect_traces(backend, {item});
  if (!c.failures.empty()) throw Error("item '" + item.item_id + "': " + c.failures.front().error);
  return std::move(c.outcomes.front());
}

}  // namespace contamscope
