#include "contamscope/toy_lm.hpp"

#include "contamscope/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace contamscope {

using nlohmann::json;

namespace {

constexpr std::uint64_t kToyStream = 0x746f792d6c6d3031ULL;

std::size_t argmax(const Eigen::VectorXd& p) {
  Eigen::Index best = 0;
  p.maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

std::size_t draw(const Eigen::VectorXd& p, double u) {
  double acc = 0.0;
  for (Eigen::Index v = 0; v < p.size(); ++v) {
    acc += p[v];
    if (u < acc) return static_cast<std::size_t>(v);
  }
  // u landed in the rounding gap above the last partial sum.
  for (Eigen::Index v = p.size() - 1; v >= 0; --v) {
    if (p[v] > 0.0) return static_cast<std::size_t>(v);
  }
  return 0;
}

}  // namespace

ToyModel::ToyModel(ToyModelSpec spec) : spec_(std::move(spec)) {
  const auto V = static_cast<Eigen::Index>(spec_.vocabulary.size());
  if (V < 8) throw InvariantError("toy vocabulary must have at least 8 tokens");
  if (spec_.base_unigram.size() != V) {
    throw InvariantError("base_unigram size must match vocabulary size");
  }
  if ((spec_.base_unigram.array() < 0.0).any() || !spec_.base_unigram.allFinite()) {
    throw InvariantError("base_unigram entries must be finite and >= 0");
  }
  if (std::abs(spec_.base_unigram.sum() - 1.0) > 1e-12) {
    throw InvariantError("base_unigram must sum to 1 within 1e-12");
  }
  if (!(spec_.pi_m >= 0.0 && spec_.pi_m <= 1.0)) throw InvariantError("pi_m must lie in [0, 1]");
  if (!(spec_.lambda_hi > 1.0 / static_cast<double>(V) && spec_.lambda_hi < 1.0)) {
    throw InvariantError("lambda_hi must lie in (1/V, 1)");
  }
  if (!(spec_.temperature > 0.0)) throw InvariantError("temperature must be > 0");
  if (spec_.response_length < 1) throw InvariantError("response_length must be >= 1");

  for (Eigen::Index v = 0; v < V; ++v) {
    const auto& tok = spec_.vocabulary[static_cast<std::size_t>(v)];
    if (tok.empty() || tok.find_first_of(" \t\r\n") != std::string::npos) {
      throw InvariantError("vocabulary tokens must be non-empty and whitespace-free");
    }
    if (!index_.emplace(tok, static_cast<std::size_t>(v)).second) {
      throw InvariantError("duplicate vocabulary token '" + tok + "'");
    }
  }

  drift_ = spec_.base_unigram.array().pow(1.0 / spec_.temperature);
  drift_ /= drift_.sum();

  for (const auto& [item, tokens] : spec_.templates) {
    std::vector<std::size_t> ids;
    ids.reserve(tokens.size());
    for (const auto& tok : tokens) {
      auto it = index_.find(tok);
      if (it == index_.end()) {
        throw InvariantError("template for '" + item + "' uses unknown token '" + tok + "'");
      }
      if (!(spec_.base_unigram[static_cast<Eigen::Index>(it->second)] > 0.0)) {
        throw InvariantError("template token '" + tok + "' has zero base probability");
      }
      ids.push_back(it->second);
    }
    if (ids.empty()) throw InvariantError("template for '" + item + "' is empty");
    template_ids_.emplace(item, std::move(ids));
  }
}

const std::vector<std::size_t>* ToyModel::template_of(std::string_view item_id) const {
  auto it = template_ids_.find(item_id);
  return it == template_ids_.end() ? nullptr : &it->second;
}

bool ToyModel::has_template(std::string_view item_id) const { return template_of(item_id) != nullptr; }

int ToyModel::natural_length(std::string_view item_id) const {
  const auto* tmpl = template_of(item_id);
  return tmpl ? static_cast<int>(tmpl->size()) : spec_.response_length;
}

std::optional<std::size_t> ToyModel::token_index(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string ToyModel::token_text(std::size_t token, int position) const {
  return position == 0 ? spec_.vocabulary[token] : " " + spec_.vocabulary[token];
}

Eigen::VectorXd ToyModel::step_distribution(std::string_view item_id, int position,
                                            GenerationState state) const {
  const auto* tmpl = template_of(item_id);
  if (state == GenerationState::drift || tmpl == nullptr || position < 0 ||
      static_cast<std::size_t>(position) >= tmpl->size()) {
    return drift_;
  }
  Eigen::VectorXd p = (1.0 - spec_.lambda_hi) * spec_.base_unigram;
  p[static_cast<Eigen::Index>((*tmpl)[static_cast<std::size_t>(position)])] += spec_.lambda_hi;
  return p;
}

Eigen::VectorXd ToyModel::marginal_distribution(std::string_view item_id, int position) const {
  if (!has_template(item_id)) return drift_;
  return spec_.pi_m * step_distribution(item_id, position, GenerationState::memory) +
         (1.0 - spec_.pi_m) * drift_;
}

TokenEvidence ToyModel::evidence(const Eigen::VectorXd& dist, std::size_t token,
                                 std::string token_text) {
  TokenEvidence ev;
  ev.token_text = std::move(token_text);
  ev.logprob = std::log(dist[static_cast<Eigen::Index>(token)]);
  double mu = 0.0, lo = 0.0, hi = -INFINITY;
  lo = INFINITY;
  for (Eigen::Index v = 0; v < dist.size(); ++v) {
    if (dist[v] <= 0.0) continue;
    const double lp = std::log(dist[v]);
    mu += dist[v] * lp;
    lo = std::min(lo, lp);
    hi = std::max(hi, lp);
  }
  double var = 0.0;
  if (hi > lo) {
    for (Eigen::Index v = 0; v < dist.size(); ++v) {
      if (dist[v] <= 0.0) continue;
      const double d = std::log(dist[v]) - mu;
      var += dist[v] * d * d;
    }
  }
  ev.pos_mu = mu;
  ev.pos_sigma = std::sqrt(var);
  return ev;
}

ToyModel::Generation ToyModel::generate(std::string_view item_id, Decoding decoding,
                                        std::uint64_t seed, int max_tokens,
                                        int sample_index) const {
  if (max_tokens < 1) throw InvariantError("max_tokens must be >= 1");
  Generation out;
  const int natural = natural_length(item_id);
  const int length = std::min(natural, max_tokens);
  out.truncated = length < natural;

  auto rng = make_engine(fnv1a(item_id, kToyStream), seed);
  if (decoding == Decoding::greedy) {
    out.state = has_template(item_id) ? GenerationState::memory : GenerationState::drift;
  } else {
    const double u = uniform01(rng);
    out.state = has_template(item_id) && u < spec_.pi_m ? GenerationState::memory
                                                        : GenerationState::drift;
  }

  GenerationSample& s = out.sample;
  s.sample_index = sample_index;
  s.decoding = decoding;
  if (decoding == Decoding::temperature) {
    s.temperature = spec_.temperature;
    s.seed = seed;
  }
  s.tokens.reserve(static_cast<std::size_t>(length));
  for (int pos = 0; pos < length; ++pos) {
    const Eigen::VectorXd p = step_distribution(item_id, pos, out.state);
    const std::size_t tok = decoding == Decoding::greedy ? argmax(p) : draw(p, uniform01(rng));
    s.tokens.push_back(evidence(p, tok, token_text(tok, pos)));
  }
  s.text = detokenize(s.tokens);
  return out;
}

std::vector<TokenEvidence> ToyModel::score_reference(
    std::string_view item_id, const std::vector<std::string>& reference) const {
  std::vector<TokenEvidence> out;
  out.reserve(reference.size());
  for (std::size_t pos = 0; pos < reference.size(); ++pos) {
    const auto tok = token_index(reference[pos]);
    if (!tok) throw InvariantError("token '" + reference[pos] + "' is not in the toy vocabulary");
    const Eigen::VectorXd p = marginal_distribution(item_id, static_cast<int>(pos));
    out.push_back(evidence(p, *tok, token_text(*tok, static_cast<int>(pos))));
  }
  return out;
}

std::vector<TokenEvidence> ToyModel::score_reference(std::string_view item_id,
                                                     std::string_view reference_text) const {
  return score_reference(item_id, split_tokens(reference_text));
}

double ToyModel::sequence_log_likelihood(std::string_view item_id,
                                         const std::vector<std::string>& reference) const {
  const auto T = static_cast<Eigen::Index>(reference.size());
  const auto V = static_cast<Eigen::Index>(spec_.vocabulary.size());
  Eigen::MatrixXd table(T, V);
  for (Eigen::Index t = 0; t < T; ++t) {
    table.row(t) = marginal_distribution(item_id, static_cast<int>(t)).transpose();
  }
  long double product = 1.0L;
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto tok = token_index(reference[static_cast<std::size_t>(t)]);
    if (!tok) throw InvariantError("token '" + reference[static_cast<std::size_t>(t)] + "' is not in the toy vocabulary");
    product *= static_cast<long double>(table(t, static_cast<Eigen::Index>(*tok)));
  }
  return static_cast<double>(std::log(product));
}

ToyEmbedding ToyModel::embed(std::string_view text) const {
  ToyEmbedding out;
  out.vector = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec_.vocabulary.size()));
  for (const auto& tok : split_tokens(text)) {
    if (auto idx = token_index(tok)) out.vector[static_cast<Eigen::Index>(*idx)] += 1.0;
  }
  out.zero_norm = out.vector.squaredNorm() == 0.0;
  return out;
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

ToyModelSpec load_toy_spec(std::istream& in) {
  std::string line, all;
  while (std::getline(in, line)) all += line;
  ToyModelSpec spec;
  try {
    const json j = json::parse(all);
    spec.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    const auto base = j.at("base_unigram").get<std::vector<double>>();
    spec.base_unigram = Eigen::Map<const Eigen::VectorXd>(base.data(), static_cast<Eigen::Index>(base.size()));
    if (auto it = j.find("templates"); it != j.end()) {
      spec.templates = it->get<std::map<std::string, std::vector<std::string>>>();
    }
    spec.pi_m = j.at("pi_m").get<double>();
    spec.lambda_hi = j.at("lambda_hi").get<double>();
    spec.temperature = j.at("temperature").get<double>();
    if (auto it = j.find("response_length"); it != j.end()) spec.response_length = it->get<int>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("toy spec: ") + e.what(), {}, {});
  }
  return spec;
}

ToyModelSpec load_toy_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open toy spec '" + path.string() + "'");
  return load_toy_spec(in);
}

void save_toy_spec(const ToyModelSpec& spec, std::ostream& out) {
  json j;
  j["vocabulary"] = spec.vocabulary;
  j["base_unigram"] = std::vector<double>(spec.base_unigram.data(),
                                          spec.base_unigram.data() + spec.base_unigram.size());
  j["templates"] = spec.templates;
  j["pi_m"] = spec.pi_m;
  j["lambda_hi"] = spec.lambda_hi;
  j["temperature"] = spec.temperature;
  j["response_length"] = spec.response_length;
  out << j.dump() << '\n';
}

ToyBenchmark make_toy_benchmark(const ToyBenchmarkOptions& o) {
  if (o.vocab_size < 8) throw InvariantError("vocab_size must be >= 8");
  if (o.n_contaminated < 0 || o.n_clean < 0) throw InvariantError("item counts must be >= 0");
  ToyBenchmark bench;
  ToyModelSpec& spec = bench.spec;
  const auto V = static_cast<Eigen::Index>(o.vocab_size);
  for (int v = 0; v < o.vocab_size; ++v) {
    std::ostringstream name;
    name << 'w' << (v < 10 ? "0" : "") << v;
    spec.vocabulary.push_back(name.str());
  }
  spec.base_unigram = Eigen::VectorXd::LinSpaced(V, 1.0, static_cast<double>(V))
                          .array()
                          .pow(-o.zipf_exponent);
  spec.base_unigram /= spec.base_unigram.sum();
  spec.pi_m = o.pi_m;
  spec.lambda_hi = o.lambda_hi;
  spec.temperature = o.temperature;
  spec.response_length = o.response_length;

  auto rng = make_engine(0x62656e6368ULL, o.seed);

  // Synonym map: a uniformly random derangement, so every memorized token
  // differs from the reference token at the same position.
  std::vector<std::size_t> synonym(static_cast<std::size_t>(V));
  do {
    std::iota(synonym.begin(), synonym.end(), std::size_t{0});
    std::shuffle(synonym.begin(), synonym.end(), rng);
  } while ([&] {
    for (std::size_t v = 0; v < synonym.size(); ++v) {
      if (synonym[v] == v) return true;
    }
    return false;
  }());

  const int total = o.n_contaminated + o.n_clean;
  std::vector<Label> labels;
  labels.insert(labels.end(), static_cast<std::size_t>(o.n_contaminated), Label::contaminated);
  labels.insert(labels.end(), static_cast<std::size_t>(o.n_clean), Label::clean);
  std::shuffle(labels.begin(), labels.end(), rng);

  for (int i = 0; i < total; ++i) {
    ItemRecord item;
    std::ostringstream id;
    id << "toy-" << i;
    item.item_id = id.str();
    item.prompt = "Question " + item.item_id + ": answer in " +
                  std::to_string(o.response_length) + " tokens.";
    item.label = labels[static_cast<std::size_t>(i)];
    item.domain_tag = "toy";
    std::vector<std::string> reference, variant;
    for (int t = 0; t < o.response_length; ++t) {
      const std::size_t tok = draw(spec.base_unigram, uniform01(rng));
      reference.push_back(spec.vocabulary[tok]);
      variant.push_back(spec.vocabulary[synonym[tok]]);
    }
    for (std::size_t t = 0; t < reference.size(); ++t) {
      item.reference_answer += (t ? " " : "") + reference[t];
    }
    if (item.label == Label::contaminated) spec.templates.emplace(item.item_id, std::move(variant));
    bench.items.push_back(std::move(item));
  }
  return bench;
}

}  // namespace contamscope
