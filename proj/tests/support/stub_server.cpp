#include "stub_server.hpp"

#include <httplib.h>

#include <chrono>
#include <cmath>

namespace contamscope::testing {

using nlohmann::json;

namespace {

std::uint64_t mix(std::uint64_t h) {
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  return h;
}

std::uint64_t hash_text(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

// Splits at spaces, keeping each space with the following word.
std::vector<std::pair<std::string, std::size_t>> words(const std::string& s) {
  std::vector<std::pair<std::string, std::size_t>> out;
  std::size_t start = 0;
  for (std::size_t i = 1; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == ' ') {
      out.emplace_back(s.substr(start, i - start), start);
      start = i;
    }
  }
  return out;
}

json top_for(double lp, bool as_chat) {
  const std::vector<std::pair<std::string, double>> alts{{"x", lp}, {"y", lp - 1.0}, {"z", lp - 2.0}};
  if (as_chat) {
    json arr = json::array();
    for (const auto& [t, v] : alts) arr.push_back({{"token", t}, {"logprob", v}});
    return arr;
  }
  json obj = json::object();
  for (const auto& [t, v] : alts) obj[t] = v;
  return obj;
}

}  // namespace

StubServer::StubServer(StubOptions options)
    : options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  server_->new_task_queue = [] { return new httplib::ThreadPool(32); };
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const int now = ++in_flight_;
    int prev = max_in_flight_.load();
    while (now > prev && !max_in_flight_.compare_exchange_weak(prev, now)) {
    }
    ++requests_;
    std::this_thread::sleep_for(std::chrono::milliseconds(options_.latency_ms));
    int status = 200;
    const std::string body = handle(req.path, req.get_header_value("Authorization"), req.body, status);
    res.status = status;
    res.set_content(body, "application/json");
    --in_flight_;
  };
  server_->Post("/v1/completions", route);
  server_->Post("/v1/chat/completions", route);
  server_->Post("/v1/embeddings", route);
  port_ = server_->bind_to_any_port("127.0.0.1");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

StubServer::~StubServer() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string StubServer::url() const { return "http://127.0.0.1:" + std::to_string(port_); }

std::vector<RecordedRequest> StubServer::recorded() const {
  std::lock_guard lock(mutex_);
  return log_;
}

std::vector<RecordedRequest> StubServer::recorded(const std::string& path) const {
  std::vector<RecordedRequest> out;
  for (auto& r : recorded()) {
    if (r.path == path) out.push_back(std::move(r));
  }
  return out;
}

std::string StubServer::handle(const std::string& path, const std::string& auth, const std::string& raw,
                               int& status) {
  json body = json::parse(raw, nullptr, false);
  int sequence = 0;
  {
    std::lock_guard lock(mutex_);
    sequence = static_cast<int>(log_.size());
    log_.push_back({path, auth, body});
  }
  if (body.is_discarded()) {
    status = 400;
    return R"({"error":"malformed json"})";
  }
  if (!options_.required_api_key.empty() && auth != "Bearer " + options_.required_api_key) {
    status = 401;
    return R"({"error":"unauthorized"})";
  }
  if (sequence < options_.throttle_first) {
    status = 429;
    return R"({"error":"rate limited"})";
  }

  if (path == "/v1/embeddings") {
    if (!options_.embeddings) {
      status = 404;
      return R"({"error":"not found"})";
    }
    json data = json::array();
    int index = 0;
    for (const auto& input : body.at("input")) {
      const auto text = input.get<std::string>();
      json vec = json::array();
      for (int d = 0; d < options_.embedding_dim; ++d) {
        vec.push_back(static_cast<double>(mix(hash_text(text) + static_cast<std::uint64_t>(d)) % 1000) / 1000.0 + 0.001);
      }
      data.push_back({{"object", "embedding"}, {"index", index++}, {"embedding", vec}});
    }
    return json{{"object", "list"}, {"data", data}}.dump();
  }

  const bool chat = path == "/v1/chat/completions";
  const std::string prompt = chat ? body.at("messages").at(0).at("content").get<std::string>()
                                  : body.at("prompt").get<std::string>();
  for (const auto& bad : options_.failing_prompts) {
    if (prompt.find(bad) != std::string::npos) {
      status = 500;
      return R"({"error":"injected failure"})";
    }
  }
  const double temperature = body.value("temperature", 1.0);
  if (options_.reject_zero_temperature && temperature == 0.0) {
    status = 400;
    return R"({"error":"temperature must be positive"})";
  }
  const bool echo = body.value("echo", false);
  if (echo && !options_.echo) {
    status = 400;
    return R"({"error":"echo is not supported"})";
  }

  const std::uint64_t seed = body.contains("seed") ? body["seed"].get<std::uint64_t>() : 0;
  const std::uint64_t state = temperature == 0.0 ? hash_text(prompt) : mix(hash_text(prompt) ^ mix(seed + 1));
  std::vector<std::string> tokens;
  std::vector<double> lps;
  std::vector<std::size_t> offsets;
  std::string text;
  if (echo) {
    for (auto& [w, off] : words(prompt)) {
      lps.push_back(offsets.empty() ? NAN : -0.25 - static_cast<double>(w.size() % 7) * 0.5);
      tokens.push_back(std::move(w));
      offsets.push_back(off);
    }
    tokens.push_back(" !");
    offsets.push_back(prompt.size());
    lps.push_back(-1.0);
    text = prompt + " !";
  } else {
    for (int i = 0; i < options_.tokens_per_completion; ++i) {
      const auto r = mix(state + static_cast<std::uint64_t>(i));
      std::string tok = std::string(i == 0 ? "" : " ") + static_cast<char>('a' + r % 5);
      offsets.push_back(text.size());
      text += tok;
      tokens.push_back(tok);
      lps.push_back(-static_cast<double>(r % 100) / 40.0);
    }
  }

  json choice;
  choice["index"] = 0;
  choice["finish_reason"] = "length";
  json logprobs;
  if (chat) {
    json content = json::array();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      json entry{{"token", tokens[i]}, {"logprob", lps[i]}};
      if (options_.top_logprobs) entry["top_logprobs"] = top_for(lps[i], true);
      content.push_back(entry);
    }
    logprobs = {{"content", content}};
    choice["message"] = {{"role", "assistant"}, {"content", text}};
  } else {
    json lp_arr = json::array(), tops = json::array();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      lp_arr.push_back(std::isnan(lps[i]) ? json() : json(lps[i]));
      tops.push_back(std::isnan(lps[i]) ? json() : top_for(lps[i], false));
    }
    logprobs = {{"tokens", tokens}, {"token_logprobs", lp_arr}, {"text_offset", offsets}};
    if (options_.top_logprobs) logprobs["top_logprobs"] = tops;
    choice["text"] = text;
  }
  choice["logprobs"] = options_.logprobs ? logprobs : json();
  return json{{"id", "cmpl-stub"}, {"object", chat ? "chat.completion" : "text_completion"},
              {"choices", json::array({choice})}}
      .dump();
}

}  // namespace contamscope::testing
