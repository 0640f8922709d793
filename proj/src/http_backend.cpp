#include "contamscope/backend.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

namespace contamscope {

using nlohmann::json;

struct HttpBackend::Reply {
  int status = 0;
  std::string body;
  bool ok() const { return status >= 200 && status < 300; }
};

namespace {

constexpr double kGreedyFallbackTemperature = 1e-4;

double jitter() {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  return std::uniform_real_distribution<double>(0.5, 1.5)(rng);
}

json parse_body(const std::string& body, const char* what) {
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw TransportError(std::string(what) + ": malformed JSON response: " + e.what());
  }
}

std::optional<std::pair<double, double>> stats_from(const json& top) {
  if (!top.is_object() && !top.is_array()) return std::nullopt;
  std::vector<double> lps;
  if (top.is_object()) {
    for (const auto& [tok, lp] : top.items()) {
      if (lp.is_number()) lps.push_back(lp.get<double>());
    }
  } else {
    for (const auto& entry : top) {
      if (entry.contains("logprob") && entry["logprob"].is_number()) lps.push_back(entry["logprob"].get<double>());
    }
  }
  if (lps.empty()) return std::nullopt;
  return estimate_pos_stats(lps);
}

TokenEvidence token(std::string text, double logprob, const json* top) {
  TokenEvidence ev;
  ev.token_text = std::move(text);
  // Servers occasionally report tiny positive values from rounding.
  ev.logprob = std::min(logprob, 0.0);
  if (top) {
    if (auto s = stats_from(*top)) {
      ev.pos_mu = s->first;
      ev.pos_sigma = s->second;
    }
  }
  return ev;
}

[[noreturn]] void no_logprobs() { throw CapabilityError("backend does not expose token log-probs"); }

std::vector<TokenEvidence> completion_tokens(const json& logprobs) {
  if (!logprobs.is_object() || !logprobs.contains("tokens") || !logprobs.contains("token_logprobs") ||
      !logprobs["token_logprobs"].is_array()) {
    no_logprobs();
  }
  const auto& toks = logprobs["tokens"];
  const auto& lps = logprobs["token_logprobs"];
  const json* tops = logprobs.contains("top_logprobs") && logprobs["top_logprobs"].is_array()
                         ? &logprobs["top_logprobs"]
                         : nullptr;
  std::vector<TokenEvidence> out;
  for (std::size_t i = 0; i < toks.size() && i < lps.size(); ++i) {
    if (!lps[i].is_number()) no_logprobs();
    const json* top = tops && i < tops->size() ? &(*tops)[i] : nullptr;
    out.push_back(token(toks[i].get<std::string>(), lps[i].get<double>(), top));
  }
  return out;
}

std::vector<TokenEvidence> chat_tokens(const json& logprobs) {
  if (!logprobs.is_object() || !logprobs.contains("content") || !logprobs["content"].is_array()) {
    no_logprobs();
  }
  std::vector<TokenEvidence> out;
  for (const auto& entry : logprobs["content"]) {
    if (!entry.contains("logprob") || !entry["logprob"].is_number()) no_logprobs();
    const json* top = entry.contains("top_logprobs") ? &entry["top_logprobs"] : nullptr;
    out.push_back(token(entry.value("token", ""), entry["logprob"].get<double>(), top));
  }
  return out;
}

}  // namespace

HttpBackend::HttpBackend(BackendConfig cfg) : Backend(std::move(cfg)) {
  const std::string& url = config().base_url;
  const auto scheme_end = url.find("://");
  const std::string scheme = scheme_end == std::string::npos ? "" : url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw InvariantError("base_url must start with http:// or https://");
  const auto path_start = url.find('/', scheme_end + 3);
  origin_ = url.substr(0, path_start);
  prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  if (config().model_name.empty()) throw InvariantError("model name is required for HTTP backends");
}

std::string HttpBackend::identity() const {
  return std::string(config().api_style == ApiStyle::chat ? "openai-chat " : "openai-completions ") +
         config().base_url + " model=" + config().model_name;
}

HttpBackend::Reply HttpBackend::post(const std::string& path, const std::string& body, int& requests) {
  const auto& cfg = config();
  std::string last;
  for (int attempt = 0; attempt <= cfg.retry_limit; ++attempt) {
    if (attempt > 0) {
      const double scale = std::ldexp(1.0, std::min(attempt - 1, 10)) * jitter();
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(
          static_cast<double>(cfg.retry_backoff.count()) * scale));
    }
    ++requests;
    httplib::Client cli(origin_);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(cfg.request_timeout);
    cli.set_connection_timeout(timeout);
    cli.set_read_timeout(timeout);
    cli.set_write_timeout(timeout);
    httplib::Headers headers;
    if (cfg.api_key) headers.emplace("Authorization", "Bearer " + *cfg.api_key);
    auto res = cli.Post(prefix_ + path, headers, body, "application/json");
    if (!res) {
      last = httplib::to_string(res.error());
      continue;
    }
    if (res->status != 429 && res->status < 500) return {res->status, res->body};
    last = "HTTP " + std::to_string(res->status);
  }
  throw TransportError("POST " + path + " failed after " + std::to_string(cfg.retry_limit + 1) +
                       " attempts: " + last);
}

GenerationSample HttpBackend::generate(const ItemRecord& item, Decoding decoding,
                                       std::optional<std::uint64_t> seed, int sample_index,
                                       int& requests) {
  const auto& cfg = config();
  const bool chat = cfg.api_style == ApiStyle::chat;
  json req;
  req["model"] = cfg.model_name;
  if (chat) {
    req["messages"] = json::array({{{"role", "user"}, {"content", item.prompt}}});
    req["logprobs"] = true;
    if (cfg.top_logprobs > 0) req["top_logprobs"] = cfg.top_logprobs;
  } else {
    req["prompt"] = item.prompt;
    req["logprobs"] = std::max(cfg.top_logprobs, 1);
    req["echo"] = false;
  }
  req["temperature"] = decoding == Decoding::greedy ? 0.0 : cfg.temperature;
  req["max_tokens"] = cfg.max_tokens;
  req["n"] = 1;
  if (seed) req["seed"] = *seed;

  const std::string path = chat ? "/v1/chat/completions" : "/v1/completions";
  Reply reply = post(path, req.dump(), requests);
  if (decoding == Decoding::greedy && (reply.status == 400 || reply.status == 422)) {
    req["temperature"] = kGreedyFallbackTemperature;
    reply = post(path, req.dump(), requests);
  }
  if (!reply.ok()) throw TransportError("POST " + path + " returned HTTP " + std::to_string(reply.status));

  const json j = parse_body(reply.body, path.c_str());
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
    throw TransportError(path + ": response has no choices");
  }
  const json& choice = j["choices"][0];
  if (!choice.contains("logprobs") || choice["logprobs"].is_null()) no_logprobs();

  GenerationSample s;
  s.sample_index = sample_index;
  s.decoding = decoding;
  if (decoding == Decoding::temperature) {
    s.temperature = cfg.temperature;
    s.seed = seed;
  }
  s.tokens = chat ? chat_tokens(choice["logprobs"]) : completion_tokens(choice["logprobs"]);
  const std::string reported = chat ? choice.value("message", json::object()).value("content", "")
                                    : choice.value("text", "");
  const std::string joined = detokenize(s.tokens);
  // The token stream is authoritative when it disagrees with the text beyond
  // trailing whitespace.
  auto rtrim = [](std::string v) {
    while (!v.empty() && std::isspace(static_cast<unsigned char>(v.back()))) v.pop_back();
    return v;
  };
  s.text = rtrim(joined) == rtrim(reported) ? reported : joined;
  return s;
}

std::optional<std::vector<TokenEvidence>> HttpBackend::score(const ItemRecord& item, int& requests) {
  const auto& cfg = config();
  if (cfg.api_style == ApiStyle::chat) return std::nullopt;
  const std::string full = item.prompt + item.reference_answer;
  json req;
  req["model"] = cfg.model_name;
  req["prompt"] = full;
  req["max_tokens"] = 1;
  req["temperature"] = 0.0;
  req["logprobs"] = std::max(cfg.top_logprobs, 1);
  req["echo"] = true;
  req["n"] = 1;
  const Reply reply = post("/v1/completions", req.dump(), requests);
  if (reply.status >= 400 && reply.status < 500) return std::nullopt;
  if (!reply.ok()) throw TransportError("POST /v1/completions returned HTTP " + std::to_string(reply.status));

  const json j = parse_body(reply.body, "/v1/completions");
  if (!j.contains("choices") || j["choices"].empty()) return std::nullopt;
  const json& lp = j["choices"][0].value("logprobs", json());
  if (!lp.is_object() || !lp.contains("text_offset") || !lp.contains("tokens") ||
      !lp.contains("token_logprobs")) {
    return std::nullopt;
  }
  const auto& offsets = lp["text_offset"];
  const auto& toks = lp["tokens"];
  const auto& lps = lp["token_logprobs"];
  const json* tops = lp.contains("top_logprobs") && lp["top_logprobs"].is_array() ? &lp["top_logprobs"] : nullptr;
  const auto begin = item.prompt.size(), end = full.size();
  std::vector<TokenEvidence> out;
  for (std::size_t i = 0; i < toks.size() && i < offsets.size() && i < lps.size(); ++i) {
    const auto off = offsets[i].get<std::size_t>();
    if (off < begin || off >= end) continue;
    if (!lps[i].is_number()) return std::nullopt;
    const json* top = tops && i < tops->size() ? &(*tops)[i] : nullptr;
    out.push_back(token(toks[i].get<std::string>(), lps[i].get<double>(), top));
  }
  if (out.empty()) return std::nullopt;
  return out;
}

std::optional<std::vector<Eigen::VectorXd>> HttpBackend::embed(const std::vector<std::string>& texts,
                                                               int& requests) {
  json req;
  req["model"] = config().model_name;
  req["input"] = texts;
  const Reply reply = post("/v1/embeddings", req.dump(), requests);
  if (reply.status == 404 || reply.status == 405 || reply.status == 501) return std::nullopt;
  if (!reply.ok()) throw TransportError("POST /v1/embeddings returned HTTP " + std::to_string(reply.status));
  const json j = parse_body(reply.body, "/v1/embeddings");
  if (!j.contains("data") || !j["data"].is_array()) {
    throw CapabilityError("embeddings response has no data array");
  }
  std::vector<Eigen::VectorXd> out(texts.size());
  std::vector<bool> seen(texts.size(), false);
  for (std::size_t k = 0; k < j["data"].size(); ++k) {
    const json& d = j["data"][k];
    const auto idx = d.value("index", k);
    if (idx >= texts.size() || seen[idx]) throw CapabilityError("embeddings response has a bad index");
    const auto v = d.at("embedding").get<std::vector<double>>();
    out[idx] = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    seen[idx] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw CapabilityError("embeddings response is missing vectors");
  }
  return out;
}

}  // namespace contamscope
