#include "contamscope/trace.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace contamscope {

using nlohmann::json;

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::string_view (&names)[N], const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<Enum>(i);
  }
  throw ParseError(std::string("unknown ") + what + " '" + std::string(s) + "'", {}, {});
}

constexpr std::string_view kLabelNames[] = {"contaminated", "clean"};
constexpr std::string_view kDecodingNames[] = {"temperature", "greedy"};
constexpr std::string_view kDetectorNames[] = {"dvd",   "perplexity", "loss", "zlib",
                                               "min_k", "min_k_pp",   "cdd",  "embedding_sim"};
constexpr std::string_view kOrientationNames[] = {"higher_means_contaminated",
                                                  "lower_means_contaminated"};

std::string rtrim(std::string s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\n' ||
                        s.back() == '\r')) {
    s.pop_back();
  }
  return s;
}

const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(std::string("missing field '") + key + "'", {}, {});
  return *it;
}

std::string require_string(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_string()) throw ParseError(std::string("field '") + key + "' must be a string", {}, {});
  return v.get<std::string>();
}

double require_number(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_number()) throw ParseError(std::string("field '") + key + "' must be a number", {}, {});
  return v.get<double>();
}

std::optional<double> optional_number(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw ParseError(std::string("field '") + key + "' must be a number", {}, {});
  return it->get<double>();
}

json token_to_json(const TokenEvidence& t) {
  json j = {{"token_text", t.token_text}, {"logprob", t.logprob}};
  if (t.pos_mu) j["pos_mu"] = *t.pos_mu;
  if (t.pos_sigma) j["pos_sigma"] = *t.pos_sigma;
  return j;
}

TokenEvidence token_from_json(const json& j) {
  TokenEvidence t;
  t.token_text = require_string(j, "token_text");
  t.logprob = require_number(j, "logprob");
  t.pos_mu = optional_number(j, "pos_mu");
  t.pos_sigma = optional_number(j, "pos_sigma");
  return t;
}

json tokens_to_json(const std::vector<TokenEvidence>& tokens) {
  json arr = json::array();
  for (const auto& t : tokens) arr.push_back(token_to_json(t));
  return arr;
}

std::vector<TokenEvidence> tokens_from_json(const json& j) {
  if (!j.is_array()) throw ParseError("token list must be an array", {}, {});
  std::vector<TokenEvidence> out;
  out.reserve(j.size());
  for (const auto& t : j) out.push_back(token_from_json(t));
  return out;
}

json sample_to_json(const GenerationSample& s) {
  json j = {{"sample_index", s.sample_index},
            {"text", s.text},
            {"decoding", to_string(s.decoding)},
            {"tokens", tokens_to_json(s.tokens)}};
  if (s.temperature) j["temperature"] = *s.temperature;
  if (s.seed) j["seed"] = *s.seed;
  return j;
}

GenerationSample sample_from_json(const json& j) {
  GenerationSample s;
  const json& idx = require(j, "sample_index");
  if (!idx.is_number_integer()) throw ParseError("sample_index must be an integer", {}, {});
  s.sample_index = idx.get<int>();
  s.text = require_string(j, "text");
  s.decoding = parse_decoding(require_string(j, "decoding"));
  s.temperature = optional_number(j, "temperature");
  if (auto it = j.find("seed"); it != j.end() && !it->is_null()) {
    if (!it->is_number_unsigned()) throw ParseError("seed must be a non-negative integer", {}, {});
    s.seed = it->get<std::uint64_t>();
  }
  s.tokens = tokens_from_json(require(j, "tokens"));
  return s;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Eigen::VectorXd vector_from_json(const json& j) {
  if (!j.is_array()) throw ParseError("embedding must be an array", {}, {});
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ParseError("embedding entries must be numbers", {}, {});
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

json item_fields(const ItemRecord& item) {
  json j = {{"item_id", item.item_id},
            {"prompt", item.prompt},
            {"reference_answer", item.reference_answer},
            {"label", to_string(item.label)}};
  if (item.domain_tag) j["domain_tag"] = *item.domain_tag;
  return j;
}

ItemRecord item_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("record must be a JSON object", {}, {});
  ItemRecord item;
  item.item_id = require_string(j, "item_id");
  item.prompt = require_string(j, "prompt");
  item.reference_answer = require_string(j, "reference_answer");
  item.label = parse_label(require_string(j, "label"));
  if (auto it = j.find("domain_tag"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw ParseError("domain_tag must be a string", {}, {});
    item.domain_tag = it->get<std::string>();
  }
  return item;
}

json trace_to_json(const ItemTrace& t) {
  json j = item_fields(t.item);
  json samples = json::array();
  for (const auto& s : t.samples) samples.push_back(sample_to_json(s));
  j["samples"] = std::move(samples);
  if (t.greedy) j["greedy"] = sample_to_json(*t.greedy);
  if (t.reference_scored) j["reference_scored"] = tokens_to_json(*t.reference_scored);
  if (t.greedy_embedding) j["greedy_embedding"] = vector_to_json(*t.greedy_embedding);
  if (t.reference_embedding) j["reference_embedding"] = vector_to_json(*t.reference_embedding);
  if (t.sample_embeddings) {
    json arr = json::array();
    for (const auto& v : *t.sample_embeddings) arr.push_back(vector_to_json(v));
    j["sample_embeddings"] = std::move(arr);
  }
  if (t.relaxed_detokenization) j["relaxed_detokenization"] = true;
  return j;
}

ItemTrace trace_from_json(const json& j) {
  ItemTrace t;
  t.item = item_from_json(j);
  const json& samples = require(j, "samples");
  if (!samples.is_array()) throw ParseError("samples must be an array", {}, {});
  for (const auto& s : samples) t.samples.push_back(sample_from_json(s));
  if (auto it = j.find("greedy"); it != j.end() && !it->is_null()) t.greedy = sample_from_json(*it);
  if (auto it = j.find("reference_scored"); it != j.end() && !it->is_null()) {
    t.reference_scored = tokens_from_json(*it);
  }
  if (auto it = j.find("greedy_embedding"); it != j.end() && !it->is_null()) {
    t.greedy_embedding = vector_from_json(*it);
  }
  if (auto it = j.find("reference_embedding"); it != j.end() && !it->is_null()) {
    t.reference_embedding = vector_from_json(*it);
  }
  if (auto it = j.find("sample_embeddings"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw ParseError("sample_embeddings must be an array", {}, {});
    std::vector<Eigen::VectorXd> vs;
    for (const auto& v : *it) vs.push_back(vector_from_json(v));
    t.sample_embeddings = std::move(vs);
  }
  if (auto it = j.find("relaxed_detokenization"); it != j.end() && it->is_boolean()) {
    t.relaxed_detokenization = it->get<bool>();
  }
  return t;
}

bool same_vector(const std::optional<Eigen::VectorXd>& a, const std::optional<Eigen::VectorXd>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  return a->size() == b->size() && (*a).cwiseEqual(*b).all();
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return in;
}

}  // namespace

std::string_view to_string(Label l) { return kLabelNames[static_cast<int>(l)]; }
std::string_view to_string(Decoding d) { return kDecodingNames[static_cast<int>(d)]; }
std::string_view to_string(Detector d) { return kDetectorNames[static_cast<int>(d)]; }
std::string_view to_string(Orientation o) { return kOrientationNames[static_cast<int>(o)]; }

Label parse_label(std::string_view s) { return parse_enum<Label>(s, kLabelNames, "label"); }
Decoding parse_decoding(std::string_view s) {
  return parse_enum<Decoding>(s, kDecodingNames, "decoding");
}
Detector parse_detector(std::string_view s) {
  return parse_enum<Detector>(s, kDetectorNames, "detector");
}
Orientation parse_orientation(std::string_view s) {
  return parse_enum<Orientation>(s, kOrientationNames, "orientation");
}

Orientation orientation_of(Detector d) {
  switch (d) {
    case Detector::dvd:
    case Detector::cdd:
    case Detector::embedding_sim:
      return Orientation::higher_means_contaminated;
    default:
      return Orientation::lower_means_contaminated;
  }
}

bool operator==(const ItemTrace& a, const ItemTrace& b) {
  if (!(a.item == b.item && a.samples == b.samples && a.greedy == b.greedy &&
        a.reference_scored == b.reference_scored &&
        a.relaxed_detokenization == b.relaxed_detokenization)) {
    return false;
  }
  if (!same_vector(a.greedy_embedding, b.greedy_embedding)) return false;
  if (!same_vector(a.reference_embedding, b.reference_embedding)) return false;
  if (a.sample_embeddings.has_value() != b.sample_embeddings.has_value()) return false;
  if (a.sample_embeddings) {
    if (a.sample_embeddings->size() != b.sample_embeddings->size()) return false;
    for (std::size_t i = 0; i < a.sample_embeddings->size(); ++i) {
      if (!same_vector((*a.sample_embeddings)[i], (*b.sample_embeddings)[i])) return false;
    }
  }
  return true;
}

std::string detokenize(const std::vector<TokenEvidence>& tokens) {
  std::string out;
  for (const auto& t : tokens) out += t.token_text;
  return out;
}

void validate(const ItemRecord& item) {
  if (item.item_id.empty()) throw InvariantError("item_id must be non-empty");
  if (item.prompt.empty()) throw InvariantError("item '" + item.item_id + "': prompt is empty");
  if (item.reference_answer.empty()) {
    throw InvariantError("item '" + item.item_id + "': reference_answer is empty");
  }
}

namespace {

void validate_tokens(const std::vector<TokenEvidence>& tokens, const std::string& where) {
  for (const auto& t : tokens) {
    if (!std::isfinite(t.logprob) || t.logprob > 0.0) {
      throw InvariantError(where + ": logprob must be finite and <= 0");
    }
    if (t.pos_sigma && !(*t.pos_sigma >= 0.0)) {
      throw InvariantError(where + ": pos_sigma must be >= 0");
    }
    if (t.pos_mu && !std::isfinite(*t.pos_mu)) throw InvariantError(where + ": pos_mu must be finite");
  }
}

}  // namespace

void validate(const GenerationSample& s, bool relaxed) {
  const std::string where = "sample " + std::to_string(s.sample_index);
  if (s.tokens.empty() && !s.text.empty()) {
    throw InvariantError(where + ": tokens empty but text is not");
  }
  validate_tokens(s.tokens, where);
  const std::string joined = detokenize(s.tokens);
  if (relaxed ? rtrim(joined) != rtrim(s.text) : joined != s.text) {
    throw InvariantError(where + ": token concatenation does not reproduce text");
  }
  if (s.decoding == Decoding::temperature) {
    if (!s.temperature || !(*s.temperature > 0.0)) {
      throw InvariantError(where + ": temperature decoding requires temperature > 0");
    }
  } else if (s.temperature) {
    throw InvariantError(where + ": greedy sample must not carry a temperature");
  }
}

void validate(const ItemTrace& t) {
  validate(t.item);
  std::vector<bool> seen(t.samples.size(), false);
  for (const auto& s : t.samples) {
    if (s.decoding != Decoding::temperature) {
      throw InvariantError("samples must be temperature-decoded");
    }
    validate(s, t.relaxed_detokenization);
    if (s.sample_index < 0 || static_cast<std::size_t>(s.sample_index) >= t.samples.size() ||
        seen[static_cast<std::size_t>(s.sample_index)]) {
      throw InvariantError("sample_index values must be distinct and contiguous from 0");
    }
    seen[static_cast<std::size_t>(s.sample_index)] = true;
    if (*s.temperature != *t.samples.front().temperature) {
      throw InvariantError("all samples must share the same temperature");
    }
  }
  if (t.greedy) {
    if (t.greedy->decoding != Decoding::greedy) throw InvariantError("greedy sample must be greedy-decoded");
    validate(*t.greedy, t.relaxed_detokenization);
  }
  if (t.reference_scored) validate_tokens(*t.reference_scored, "reference_scored");
  auto check_dim = [](const Eigen::VectorXd& v, const char* name) {
    if (v.size() == 0) throw InvariantError(std::string(name) + " has dimension 0");
    if (!v.allFinite()) throw InvariantError(std::string(name) + " has non-finite entries");
  };
  if (t.greedy_embedding) check_dim(*t.greedy_embedding, "greedy_embedding");
  if (t.reference_embedding) check_dim(*t.reference_embedding, "reference_embedding");
  if (t.greedy_embedding && t.reference_embedding &&
      t.greedy_embedding->size() != t.reference_embedding->size()) {
    throw InvariantError("greedy_embedding and reference_embedding differ in dimension");
  }
  if (t.sample_embeddings) {
    if (t.sample_embeddings->size() != t.samples.size()) {
      throw InvariantError("sample_embeddings must have one vector per sample");
    }
    for (const auto& v : *t.sample_embeddings) {
      check_dim(v, "sample_embedding");
      if (v.size() != t.sample_embeddings->front().size()) {
        throw InvariantError("sample_embeddings differ in dimension");
      }
    }
  }
}

std::vector<ItemRecord> parse_dataset(std::istream& in) {
  std::vector<ItemRecord> items;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (rtrim(line).empty()) continue;
    ItemRecord item;
    try {
      item = item_from_json(json::parse(line));
      validate(item);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what(), lineno, {});
    } catch (const Error& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what(), lineno, {});
    }
    if (!ids.insert(item.item_id).second) {
      throw ParseError("duplicate item_id '" + item.item_id + "' at line " + std::to_string(lineno),
                       lineno, {});
    }
    items.push_back(std::move(item));
  }
  if (items.empty()) throw ParseError("dataset is empty", {}, {});
  return items;
}

std::vector<ItemRecord> parse_dataset(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_dataset(in);
}

void write_dataset(const std::vector<ItemRecord>& items, std::ostream& out) {
  for (const auto& item : items) out << item_fields(item).dump() << '\n';
}

void write_trace(const ItemTrace& trace, std::ostream& out) {
  validate(trace);
  out << trace_to_json(trace).dump() << '\n';
}

std::optional<ItemTrace> TraceReader::next() {
  std::string line;
  while (true) {
    const std::uint64_t start = offset_;
    if (!std::getline(in_, line)) return std::nullopt;
    ++line_;
    offset_ += line.size() + (in_.eof() ? 0 : 1);
    if (rtrim(line).empty()) continue;
    try {
      ItemTrace t = trace_from_json(json::parse(line));
      validate(t);
      return t;
    } catch (const json::parse_error& e) {
      const std::uint64_t at = start + (e.byte > 0 ? e.byte - 1 : 0);
      throw ParseError("trace parse error at byte " + std::to_string(at) + ": " + e.what(), line_,
                       at);
    } catch (const json::exception& e) {
      throw ParseError("trace error at byte " + std::to_string(start) + ": " + e.what(), line_,
                       start);
    } catch (const Error& e) {
      throw ParseError("trace error at byte " + std::to_string(start) + ": " + e.what(), line_,
                       start);
    }
  }
}

ItemTrace read_trace(std::istream& in) {
  TraceReader reader(in);
  auto t = reader.next();
  if (!t) throw ParseError("no trace in input", {}, 0);
  return std::move(*t);
}

std::vector<ItemTrace> read_traces(std::istream& in) {
  TraceReader reader(in);
  std::vector<ItemTrace> out;
  while (auto t = reader.next()) out.push_back(std::move(*t));
  return out;
}

std::vector<ItemTrace> read_traces(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_traces(in);
}

void write_score(const DetectorScore& s, std::ostream& out) {
  json j = {{"item_id", s.item_id},
            {"detector", to_string(s.detector)},
            {"value", s.value ? json(*s.value) : json(nullptr)},
            {"orientation", to_string(s.orientation)},
            {"label", to_string(s.label)}};
  if (!s.available()) j["unavailable_reason"] = s.unavailable_reason;
  out << j.dump() << '\n';
}

std::vector<DetectorScore> read_scores(std::istream& in) {
  std::vector<DetectorScore> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (rtrim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      DetectorScore s;
      s.item_id = require_string(j, "item_id");
      s.detector = parse_detector(require_string(j, "detector"));
      s.value = optional_number(j, "value");
      s.orientation = parse_orientation(require_string(j, "orientation"));
      s.label = parse_label(require_string(j, "label"));
      if (auto it = j.find("unavailable_reason"); it != j.end() && it->is_string()) {
        s.unavailable_reason = it->get<std::string>();
      }
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw ParseError("score line " + std::to_string(lineno) + ": " + e.what(), lineno, {});
    } catch (const ParseError& e) {
      throw ParseError("score line " + std::to_string(lineno) + ": " + e.what(), lineno, {});
    }
  }
  return out;
}

std::vector<DetectorScore> read_scores(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_scores(in);
}

}  // namespace contamscope
