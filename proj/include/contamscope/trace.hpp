#pragma once

// Canonical data model: benchmark items, generation evidence, detector scores,
// and the line-delimited JSON formats used to persist them.

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace contamscope {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input. `line` is 1-based when known, `offset` is a byte offset
/// into the stream when known.
struct ParseError : Error {
  ParseError(const std::string& what, std::optional<std::size_t> line,
             std::optional<std::uint64_t> offset)
      : Error(what), line(line), offset(offset) {}
  std::optional<std::size_t> line;
  std::optional<std::uint64_t> offset;
};

struct InvariantError : Error {
  using Error::Error;
};

enum class Label { contaminated, clean };
enum class Decoding { temperature, greedy };
enum class Detector { dvd, perplexity, loss, zlib, min_k, min_k_pp, cdd, embedding_sim };
enum class Orientation { higher_means_contaminated, lower_means_contaminated };

inline constexpr Detector kAllDetectors[] = {
    Detector::dvd,    Detector::perplexity, Detector::loss, Detector::zlib,
    Detector::min_k,  Detector::min_k_pp,   Detector::cdd,  Detector::embedding_sim};

std::string_view to_string(Label l);
std::string_view to_string(Decoding d);
std::string_view to_string(Detector d);
std::string_view to_string(Orientation o);
Label parse_label(std::string_view s);
Decoding parse_decoding(std::string_view s);
Detector parse_detector(std::string_view s);
Orientation parse_orientation(std::string_view s);

/// Orientation is a fixed property of each detector.
Orientation orientation_of(Detector d);

struct ItemRecord {
  std::string item_id;
  std::string prompt;
  std::string reference_answer;
  Label label = Label::clean;
  std::optional<std::string> domain_tag;

  bool operator==(const ItemRecord&) const = default;
};

/// One token with its natural-log conditional probability. pos_mu / pos_sigma
/// are the mean and standard deviation of log-probabilities of the full
/// next-token distribution at that position, when the backend can supply them.
struct TokenEvidence {
  std::string token_text;
  double logprob = 0.0;
  std::optional<double> pos_mu;
  std::optional<double> pos_sigma;

  bool operator==(const TokenEvidence&) const = default;
};

struct GenerationSample {
  int sample_index = 0;
  std::string text;
  std::vector<TokenEvidence> tokens;
  Decoding decoding = Decoding::temperature;
  std::optional<double> temperature;  // absent for greedy
  std::optional<std::uint64_t> seed;

  bool operator==(const GenerationSample&) const = default;
};

struct ItemTrace {
  ItemRecord item;
  std::vector<GenerationSample> samples;
  std::optional<GenerationSample> greedy;
  std::optional<std::vector<TokenEvidence>> reference_scored;
  std::optional<Eigen::VectorXd> greedy_embedding;
  std::optional<Eigen::VectorXd> reference_embedding;
  // Per-sample embeddings, only collected for the pairwise similarity mode.
  std::optional<std::vector<Eigen::VectorXd>> sample_embeddings;
  // Allows token concatenation to differ from text by trailing whitespace.
  bool relaxed_detokenization = false;
};

bool operator==(const ItemTrace& a, const ItemTrace& b);

/// A detector's scalar for one item. `value` is absent when the detector could
/// not run on this item; `unavailable_reason` then says why. The label travels
/// with the score so evaluation can run on score files alone.
struct DetectorScore {
  Detector detector = Detector::dvd;
  std::string item_id;
  std::optional<double> value;
  Orientation orientation = Orientation::higher_means_contaminated;
  Label label = Label::clean;
  std::string unavailable_reason;

  bool available() const { return value.has_value(); }
  bool operator==(const DetectorScore&) const = default;
};

// Invariant checks. Throw InvariantError naming the violated rule.
void validate(const ItemRecord& item);
void validate(const GenerationSample& sample, bool relaxed_detokenization = false);
void validate(const ItemTrace& trace);

/// Reads one item per line. Enforces item_id uniqueness; rejects empty input.
std::vector<ItemRecord> parse_dataset(std::istream& in);
std::vector<ItemRecord> parse_dataset(const std::filesystem::path& path);
void write_dataset(const std::vector<ItemRecord>& items, std::ostream& out);

/// Writes one trace as a single line. Validates first, so nothing is emitted
/// for an invalid trace.
void write_trace(const ItemTrace& trace, std::ostream& out);

/// Sequential reader over a trace stream; errors carry the byte offset.
class TraceReader {
 public:
  explicit TraceReader(std::istream& in) : in_(in) {}
  std::optional<ItemTrace> next();
  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
  std::size_t line_ = 0;
};

ItemTrace read_trace(std::istream& in);
std::vector<ItemTrace> read_traces(std::istream& in);
std::vector<ItemTrace> read_traces(const std::filesystem::path& path);

void write_score(const DetectorScore& score, std::ostream& out);
std::vector<DetectorScore> read_scores(std::istream& in);
std::vector<DetectorScore> read_scores(const std::filesystem::path& path);

/// Concatenation of token texts of a sample.
std::string detokenize(const std::vector<TokenEvidence>& tokens);

}  // namespace contamscope
