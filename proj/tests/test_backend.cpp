#include "contamscope/backend.hpp"

#include "support/stub_server.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <sstream>

namespace contamscope {
namespace {

using testing::StubOptions;
using testing::StubServer;

ItemRecord item(int i, Label label = Label::clean) {
  return {"q" + std::to_string(i), "Question number " + std::to_string(i), " the answer " + std::to_string(i),
          label, std::nullopt};
}

BackendConfig http_config(const StubServer& stub, int samples = 3) {
  BackendConfig cfg;
  cfg.base_url = stub.url();
  cfg.model_name = "stub-model";
  cfg.num_samples = samples;
  cfg.max_tokens = 16;
  cfg.seed_base = 1000;
  cfg.retry_backoff = std::chrono::milliseconds(1);
  cfg.request_timeout = std::chrono::milliseconds(5000);
  return cfg;
}

TEST(HttpBackendTest, CollectsFullTraceWithWellFormedRequests) {
  StubServer stub;
  HttpBackend backend(http_config(stub));
  const auto outcome = collect_trace(backend, item(1));
  EXPECT_TRUE(outcome.degraded_fields.empty());
  EXPECT_EQ(outcome.trace.samples.size(), 3u);
  ASSERT_TRUE(outcome.trace.greedy);
  ASSERT_TRUE(outcome.trace.reference_scored);
  // " the", " answer", " 1": the echoed prompt and the generated token are dropped.
  ASSERT_EQ(outcome.trace.reference_scored->size(), 3u);
  EXPECT_EQ((*outcome.trace.reference_scored)[0].token_text, " the");
  ASSERT_TRUE(outcome.trace.greedy_embedding);
  EXPECT_EQ(outcome.trace.greedy_embedding->size(), 4);
  // 3 samples + greedy + score + one embeddings call.
  EXPECT_EQ(outcome.request_count, 6);
  EXPECT_EQ(stub.request_count(), 6);

  const auto completions = stub.recorded("/v1/completions");
  ASSERT_EQ(completions.size(), 5u);
  int sampled = 0, greedy = 0, echo = 0;
  for (const auto& r : completions) {
    EXPECT_EQ(r.body.at("model"), "stub-model");
    EXPECT_TRUE(r.body.at("prompt").is_string());
    EXPECT_TRUE(r.body.at("logprobs").is_number_integer());
    EXPECT_GE(r.body.at("logprobs").get<int>(), 1);
    if (r.body.value("echo", false)) {
      ++echo;
      EXPECT_EQ(r.body.at("prompt"), "Question number 1 the answer 1");
      EXPECT_EQ(r.body.at("max_tokens"), 1);
    } else if (r.body.at("temperature") == 0.0) {
      ++greedy;
      EXPECT_FALSE(r.body.contains("seed"));
      EXPECT_EQ(r.body.at("max_tokens"), 16);
    } else {
      ++sampled;
      EXPECT_EQ(r.body.at("temperature"), 0.8);
      const auto seed = r.body.at("seed").get<std::uint64_t>();
      EXPECT_GE(seed, 1000u);
      EXPECT_LT(seed, 1003u);
    }
  }
  EXPECT_EQ(sampled, 3);
  EXPECT_EQ(greedy, 1);
  EXPECT_EQ(echo, 1);

  const auto emb = stub.recorded("/v1/embeddings");
  ASSERT_EQ(emb.size(), 1u);
  EXPECT_EQ(emb[0].body.at("input").size(), 2u);
  EXPECT_EQ(emb[0].body.at("input")[1], " the answer 1");
}

TEST(HttpBackendTest, SamplesCarryPositionEstimates) {
  StubServer stub;
  HttpBackend backend(http_config(stub));
  EXPECT_TRUE(backend.approximate_pos_stats());
  const auto samples = sample_generations(backend, item(2));
  for (const auto& s : samples) {
    EXPECT_NO_THROW(validate(s));
    for (const auto& t : s.tokens) {
      ASSERT_TRUE(t.pos_mu && t.pos_sigma);
      EXPECT_GE(*t.pos_sigma, 0.0);
    }
  }
}

TEST(HttpBackendTest, ConcurrencyBoundAndExactRequestCount) {
  StubOptions opt;
  opt.latency_ms = 15;
  StubServer stub(opt);
  auto cfg = http_config(stub, 50);
  cfg.max_concurrent_requests = 8;
  HttpBackend backend(cfg);
  int requests = 0;
  const auto samples = sample_generations(backend, item(3), &requests);
  EXPECT_EQ(samples.size(), 50u);
  for (std::size_t j = 0; j < samples.size(); ++j) EXPECT_EQ(samples[j].sample_index, static_cast<int>(j));
  EXPECT_EQ(requests, stub.request_count());
  EXPECT_EQ(requests, 50);
  EXPECT_LE(stub.max_in_flight(), 8);
  EXPECT_GE(stub.max_in_flight(), 2);
}

TEST(HttpBackendTest, CollectionHonorsConcurrencyBound) {
  StubOptions opt;
  opt.latency_ms = 5;
  StubServer stub(opt);
  auto cfg = http_config(stub, 10);
  cfg.max_concurrent_requests = 3;
  HttpBackend backend(cfg);
  std::vector<ItemRecord> items;
  for (int i = 0; i < 6; ++i) items.push_back(item(i));
  const auto c = collect_traces(backend, items);
  EXPECT_EQ(c.outcomes.size(), 6u);
  EXPECT_EQ(c.request_count, stub.request_count());
  EXPECT_LE(stub.max_in_flight(), 3);
}

TEST(HttpBackendTest, RetriesAfterRateLimit) {
  StubOptions opt;
  opt.throttle_first = 2;
  StubServer stub(opt);
  HttpBackend backend(http_config(stub));
  int requests = 0;
  const auto g = greedy_generation(backend, item(4), &requests);
  EXPECT_FALSE(g.tokens.empty());
  EXPECT_EQ(requests, 3);
  EXPECT_EQ(stub.request_count(), 3);
}

TEST(HttpBackendTest, GivesUpAfterRetryLimit) {
  StubOptions opt;
  opt.throttle_first = 100;
  StubServer stub(opt);
  auto cfg = http_config(stub);
  cfg.retry_limit = 2;
  HttpBackend backend(cfg);
  int requests = 0;
  EXPECT_THROW(greedy_generation(backend, item(5), &requests), TransportError);
  EXPECT_EQ(requests, 3);
}

TEST(HttpBackendTest, MissingLogprobsIsCapabilityError) {
  StubOptions opt;
  opt.logprobs = false;
  StubServer stub(opt);
  HttpBackend backend(http_config(stub));
  try {
    collect_traces(backend, {item(6), item(7)});
    FAIL();
  } catch (const CapabilityError& e) {
    EXPECT_NE(std::string(e.what()).find("backend does not expose token log-probs"), std::string::npos);
  }
}

TEST(HttpBackendTest, MissingEmbeddingsEndpointDegrades) {
  StubOptions opt;
  opt.embeddings = false;
  StubServer stub(opt);
  HttpBackend backend(http_config(stub));
  const auto o = collect_trace(backend, item(8));
  EXPECT_EQ(o.degraded_fields, std::set<DegradedField>{DegradedField::no_embeddings});
  EXPECT_FALSE(o.trace.greedy_embedding);
}

TEST(HttpBackendTest, MissingEchoDegradesReferenceScoring) {
  StubOptions opt;
  opt.echo = false;
  StubServer stub(opt);
  HttpBackend backend(http_config(stub));
  const auto o = collect_trace(backend, item(9));
  EXPECT_TRUE(o.degraded_fields.count(DegradedField::no_reference_scoring));
  EXPECT_FALSE(o.trace.reference_scored);
}

TEST(HttpBackendTest, MissingTopLogprobsDegradesPositionStats) {
  StubOptions opt;
  opt.top_logprobs = false;
  StubServer stub(opt);
  HttpBackend backend(http_config(stub));
  const auto o = collect_trace(backend, item(10));
  EXPECT_TRUE(o.degraded_fields.count(DegradedField::no_pos_stats));
}

TEST(HttpBackendTest, ChatStyleHasNoReferenceScoring) {
  StubServer stub;
  auto cfg = http_config(stub);
  cfg.api_style = ApiStyle::chat;
  HttpBackend backend(cfg);
  const auto o = collect_trace(backend, item(11));
  EXPECT_TRUE(o.degraded_fields.count(DegradedField::no_reference_scoring));
  EXPECT_EQ(o.trace.samples.size(), 3u);
  EXPECT_TRUE(stub.recorded("/v1/completions").empty());
  const auto chat = stub.recorded("/v1/chat/completions");
  ASSERT_EQ(chat.size(), 4u);
  EXPECT_EQ(chat[0].body.at("messages")[0].at("role"), "user");
  EXPECT_EQ(chat[0].body.at("logprobs"), true);
}

TEST(HttpBackendTest, GreedyFallsBackWhenZeroTemperatureRejected) {
  StubOptions opt;
  opt.reject_zero_temperature = true;
  StubServer stub(opt);
  HttpBackend backend(http_config(stub));
  int requests = 0;
  greedy_generation(backend, item(12), &requests);
  EXPECT_EQ(requests, 2);
  const auto rec = stub.recorded("/v1/completions");
  ASSERT_EQ(rec.size(), 2u);
  EXPECT_EQ(rec[0].body.at("temperature"), 0.0);
  EXPECT_EQ(rec[1].body.at("temperature"), 1e-4);
}

TEST(HttpBackendTest, EmptyPromptRejectedBeforeAnyCall) {
  StubServer stub;
  HttpBackend backend(http_config(stub));
  ItemRecord bad = item(13);
  bad.prompt.clear();
  EXPECT_THROW(greedy_generation(backend, bad), InvariantError);
  EXPECT_THROW(sample_generations(backend, bad), InvariantError);
  EXPECT_THROW(score_reference(backend, bad), InvariantError);
  const auto c = collect_traces(backend, {bad});
  EXPECT_EQ(c.failures.size(), 1u);
  EXPECT_EQ(stub.request_count(), 0);
}

TEST(HttpBackendTest, SendsBearerToken) {
  StubOptions opt;
  opt.required_api_key = "sk-test";
  StubServer stub(opt);
  auto cfg = http_config(stub);
  cfg.api_key = "sk-test";
  HttpBackend backend(cfg);
  EXPECT_NO_THROW(greedy_generation(backend, item(14)));
  EXPECT_EQ(stub.recorded()[0].authorization, "Bearer sk-test");
}

TEST(HttpBackendTest, ZeroDimensionalEmbeddingIsHardError) {
  StubOptions opt;
  opt.embedding_dim = 0;
  StubServer stub(opt);
  HttpBackend backend(http_config(stub));
  EXPECT_THROW(fetch_embeddings(backend, "a", "b"), CapabilityError);
}

TEST(HttpBackendTest, PermanentTransportFailuresArePartial) {
  StubOptions opt;
  opt.latency_ms = 0;
  opt.failing_prompts = {"Question number 17", "Question number 58"};
  StubServer stub(opt);
  auto cfg = http_config(stub, 2);
  cfg.retry_limit = 1;
  cfg.max_concurrent_requests = 8;
  HttpBackend backend(cfg);
  std::vector<ItemRecord> items;
  for (int i = 0; i < 100; ++i) items.push_back(item(i));
  const auto c = collect_traces(backend, items);
  EXPECT_EQ(c.outcomes.size(), 98u);
  ASSERT_EQ(c.failures.size(), 2u);
  EXPECT_EQ(c.failures[0].item_id, "q17");
  EXPECT_EQ(c.failures[1].item_id, "q58");
  EXPECT_EQ(c.request_count, stub.request_count());
  for (std::size_t k = 1; k < c.outcomes.size(); ++k) {
    EXPECT_LT(std::stoi(c.outcomes[k - 1].trace.item.item_id.substr(1)),
              std::stoi(c.outcomes[k].trace.item.item_id.substr(1)));
  }
}

TEST(HttpBackendTest, RejectsBadConfig) {
  BackendConfig cfg;
  cfg.base_url = "ftp://nowhere";
  EXPECT_THROW(HttpBackend{cfg}, Error);
  cfg.base_url = "http://127.0.0.1:1";
  cfg.num_samples = 0;
  EXPECT_THROW(HttpBackend{cfg}, Error);
}

TEST(PosStatsTest, LumpedTailEstimate) {
  // p = {0.5, 0.25} plus a tail of 0.25.
  const auto [mu, sigma] = estimate_pos_stats({std::log(0.5), std::log(0.25)});
  const double expected_mu = 0.5 * std::log(0.5) + 0.5 * std::log(0.25);
  const double expected_var = 0.5 * std::pow(std::log(0.5) - expected_mu, 2) +
                              0.5 * std::pow(std::log(0.25) - expected_mu, 2);
  EXPECT_NEAR(mu, expected_mu, 1e-12);
  EXPECT_NEAR(sigma, std::sqrt(expected_var), 1e-12);
}

TEST(RunBoundedTest, RunsEveryTaskAndPropagatesFirstError) {
  std::atomic<int> sum{0};
  run_bounded(100, 4, [&](std::size_t i) { sum += static_cast<int>(i); });
  EXPECT_EQ(sum.load(), 4950);
  EXPECT_THROW(run_bounded(10, 3, [](std::size_t i) {
                 if (i == 4) throw std::runtime_error("boom");
               }),
               std::runtime_error);
}

ToyModelSpec toy_spec(double pi_m) {
  auto bench = make_toy_benchmark({.pi_m = pi_m, .n_contaminated = 3, .n_clean = 3, .seed = 2});
  return bench.spec;
}

TEST(ToyBackendTest, DeterministicAcrossInvocations) {
  const auto bench = make_toy_benchmark({.n_contaminated = 2, .n_clean = 2, .seed = 2});
  BackendConfig cfg;
  cfg.base_url = "toy:mem";
  cfg.num_samples = 3;
  cfg.seed_base = 7ULL << 32;
  auto run = [&] {
    ToyBackend backend(cfg, ToyModel(bench.spec));
    std::ostringstream out;
    for (const auto& o : collect_traces(backend, bench.items).outcomes) write_trace(o.trace, out);
    return out.str();
  };
  const std::string a = run();
  EXPECT_EQ(a, run());
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 4);
}

TEST(ToyBackendTest, FullCapabilityAndGreedyTemplate) {
  const auto bench = make_toy_benchmark({.n_contaminated = 2, .n_clean = 2, .seed = 2});
  BackendConfig cfg;
  cfg.base_url = "toy:mem";
  cfg.num_samples = 3;
  ToyBackend backend(cfg, ToyModel(bench.spec));
  for (const auto& it : bench.items) {
    const auto o = collect_trace(backend, it);
    EXPECT_TRUE(o.degraded_fields.empty());
    EXPECT_EQ(o.request_count, 3 + 1 + 1 + 1);
    if (it.label == Label::contaminated) {
      std::string tmpl;
      for (const auto& t : bench.spec.templates.at(it.item_id)) tmpl += (tmpl.empty() ? "" : " ") + t;
      EXPECT_EQ(o.trace.greedy->text, tmpl);
    }
    int calls = 0;
    EXPECT_EQ(greedy_generation(backend, it, &calls), *o.trace.greedy);
    EXPECT_EQ(calls, 1);
  }
}

TEST(ToyBackendTest, TemplateReferenceScoresAboveAdherenceFloor) {
  auto spec = toy_spec(1.0);
  BackendConfig cfg;
  cfg.base_url = "toy:mem";
  ToyBackend backend(cfg, ToyModel(spec));
  for (const auto& [id, tmpl] : spec.templates) {
    ItemRecord it{id, "p", "", Label::contaminated, std::nullopt};
    for (const auto& t : tmpl) it.reference_answer += (it.reference_answer.empty() ? "" : " ") + t;
    const auto ev = score_reference(backend, it);
    ASSERT_TRUE(ev);
    for (const auto& t : *ev) EXPECT_GE(t.logprob, std::log(spec.lambda_hi));
  }
}

TEST(ToyBackendTest, OutOfVocabularyReferenceNamesToken) {
  BackendConfig cfg;
  cfg.base_url = "toy:mem";
  ToyBackend backend(cfg, ToyModel(toy_spec(0.5)));
  try {
    score_reference(backend, {"x", "p", "w01 zzz", Label::clean, std::nullopt});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("zzz"), std::string::npos);
  }
}

TEST(ToyBackendTest, EmbeddingsAreBagOfTokens) {
  BackendConfig cfg;
  cfg.base_url = "toy:mem";
  ToyBackend backend(cfg, ToyModel(toy_spec(0.5)));
  const auto e = fetch_embeddings(backend, "w01 w02", "w02 w01");
  ASSERT_TRUE(e);
  EXPECT_EQ(e->first, e->second);
  EXPECT_EQ(e->first.sum(), 2.0);
}

}  // namespace
}  // namespace contamscope
