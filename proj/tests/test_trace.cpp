#include "contamscope/trace.hpp"

#include "support/generators.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace contamscope {
namespace {

ItemTrace small_trace() {
  ItemTrace t;
  t.item = {"q1", "What is 2+2?", " 4", Label::contaminated, "math"};
  GenerationSample s;
  s.sample_index = 0;
  s.decoding = Decoding::temperature;
  s.temperature = 0.8;
  s.seed = 7;
  s.tokens = {{"The", -0.5, -2.0, 1.0}, {" answer", -1.25, std::nullopt, std::nullopt}};
  s.text = "The answer";
  t.samples = {s};
  s.sample_index = 1;
  t.samples.push_back(s);
  return t;
}

TEST(DatasetTest, ParsesItemsInOrder) {
  std::istringstream in(
      R"({"item_id":"a","prompt":"p","reference_answer":"r","label":"clean"})"
      "\n\n"
      R"({"item_id":"b","prompt":"p2","reference_answer":"r2","label":"contaminated","domain_tag":"math"})"
      "\n");
  const auto items = parse_dataset(in);
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0].item_id, "a");
  EXPECT_EQ(items[0].label, Label::clean);
  EXPECT_FALSE(items[0].domain_tag);
  EXPECT_EQ(items[1].label, Label::contaminated);
  EXPECT_EQ(items[1].domain_tag, "math");
}

TEST(DatasetTest, DuplicateIdNamesIdAndLine) {
  std::istringstream in(
      R"({"item_id":"q7","prompt":"p","reference_answer":"r","label":"clean"})"
      "\n"
      R"({"item_id":"q7","prompt":"p","reference_answer":"r","label":"clean"})"
      "\n");
  try {
    parse_dataset(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate item_id 'q7'"), std::string::npos);
    EXPECT_EQ(e.line, 2u);
  }
}

TEST(DatasetTest, RejectsEmptyAndMalformedInput) {
  std::istringstream empty("");
  EXPECT_THROW(parse_dataset(empty), ParseError);
  std::istringstream bad_label(R"({"item_id":"a","prompt":"p","reference_answer":"r","label":"dirty"})");
  EXPECT_THROW(parse_dataset(bad_label), ParseError);
  std::istringstream missing(R"({"item_id":"a","prompt":"p","label":"clean"})");
  try {
    parse_dataset(missing);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("reference_answer"), std::string::npos);
    EXPECT_EQ(e.line, 1u);
  }
}

TEST(DatasetTest, WriteThenParseIsIdentity) {
  const std::vector<ItemRecord> items{{"x", "p \"q\"", "r\n", Label::clean, std::nullopt},
                                      {"y", "é", "中", Label::contaminated, "tag"}};
  std::stringstream io;
  write_dataset(items, io);
  EXPECT_EQ(parse_dataset(io), items);
}

TEST(TraceTest, RoundTripsSmallTrace) {
  std::stringstream io;
  write_trace(small_trace(), io);
  EXPECT_EQ(read_trace(io), small_trace());
}

TEST(TraceTest, UsesDocumentedFieldNames) {
  std::stringstream io;
  ItemTrace t = small_trace();
  t.greedy = t.samples[0];
  t.greedy->decoding = Decoding::greedy;
  t.greedy->temperature.reset();
  t.greedy->seed.reset();
  t.reference_scored = std::vector<TokenEvidence>{{" 4", -0.1, std::nullopt, std::nullopt}};
  t.greedy_embedding = Eigen::Vector2d(1, 0);
  t.reference_embedding = Eigen::Vector2d(0, 1);
  write_trace(t, io);
  const std::string line = io.str();
  for (const char* key : {"\"item_id\"", "\"samples\"", "\"sample_index\"", "\"text\"", "\"decoding\"",
                          "\"temperature\"", "\"seed\"", "\"tokens\"", "\"token_text\"", "\"logprob\"",
                          "\"pos_mu\"", "\"pos_sigma\"", "\"greedy\"", "\"reference_scored\"",
                          "\"greedy_embedding\"", "\"reference_embedding\""}) {
    EXPECT_NE(line.find(key), std::string::npos) << key;
  }
  EXPECT_EQ(std::count(line.begin(), line.end(), '\n'), 1);
}

TEST(TraceTest, RejectsPositiveLogprob) {
  ItemTrace t = small_trace();
  t.samples[0].tokens[0].logprob = 0.5;
  std::stringstream io;
  EXPECT_THROW(write_trace(t, io), InvariantError);
  EXPECT_TRUE(io.str().empty());
}

TEST(TraceTest, RejectsTextTokenMismatchUnlessRelaxedTrailingWhitespace) {
  ItemTrace t = small_trace();
  t.samples[0].text = "The answer\n";
  EXPECT_THROW(validate(t), InvariantError);
  t.relaxed_detokenization = true;
  EXPECT_NO_THROW(validate(t));
  t.samples[0].text = "The Answer";
  EXPECT_THROW(validate(t), InvariantError);
}

TEST(TraceTest, RejectsMixedTemperaturesAndGappedIndices) {
  ItemTrace t = small_trace();
  t.samples[1].temperature = 1.0;
  EXPECT_THROW(validate(t), InvariantError);
  t = small_trace();
  t.samples[1].sample_index = 5;
  EXPECT_THROW(validate(t), InvariantError);
}

TEST(TraceTest, RejectsEmbeddingDimensionMismatch) {
  ItemTrace t = small_trace();
  t.greedy_embedding = Eigen::Vector2d(1, 0);
  t.reference_embedding = Eigen::Vector3d(1, 0, 0);
  EXPECT_THROW(validate(t), InvariantError);
}

TEST(TraceTest, TruncatedStreamReportsByteOffset) {
  std::stringstream io;
  write_trace(small_trace(), io);
  const std::string first = io.str();
  std::string second = first.substr(0, first.size() / 2);
  std::istringstream in(first + second);
  TraceReader reader(in);
  ASSERT_TRUE(reader.next());
  try {
    reader.next();
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    ASSERT_TRUE(e.offset);
    EXPECT_GE(*e.offset, first.size());
    EXPECT_LE(*e.offset, first.size() + second.size());
    EXPECT_EQ(e.line, 2u);
  }
}

TEST(TraceTest, ReaderRejectsInvalidTrace) {
  std::istringstream in(
      R"({"item_id":"a","prompt":"p","reference_answer":"r","label":"clean","samples":[)"
      R"({"sample_index":0,"text":"x","decoding":"temperature","temperature":0.8,)"
      R"("tokens":[{"token_text":"x","logprob":1.5}]}]})");
  EXPECT_THROW(read_traces(in), ParseError);
}

TEST(ScoreTest, RoundTripsAvailableAndUnavailable) {
  const std::vector<DetectorScore> scores{
      {Detector::dvd, "a", 0.125, Orientation::higher_means_contaminated, Label::contaminated, ""},
      {Detector::embedding_sim, "a", std::nullopt, Orientation::higher_means_contaminated, Label::clean,
       "zero-norm"}};
  std::stringstream io;
  for (const auto& s : scores) write_score(s, io);
  EXPECT_NE(io.str().find("\"value\":null"), std::string::npos);
  EXPECT_EQ(read_scores(io), scores);
}

TEST(OrientationTest, FixedPerDetector) {
  EXPECT_EQ(orientation_of(Detector::dvd), Orientation::higher_means_contaminated);
  EXPECT_EQ(orientation_of(Detector::cdd), Orientation::higher_means_contaminated);
  EXPECT_EQ(orientation_of(Detector::embedding_sim), Orientation::higher_means_contaminated);
  for (Detector d : {Detector::perplexity, Detector::loss, Detector::zlib, Detector::min_k, Detector::min_k_pp}) {
    EXPECT_EQ(orientation_of(d), Orientation::lower_means_contaminated) << to_string(d);
  }
}

TEST(TraceProperty, FiveHundredRandomTracesRoundTrip) {
  testing::Gen gen(20240611);
  std::stringstream io;
  std::vector<ItemTrace> written;
  for (int i = 0; i < 500; ++i) {
    written.push_back(gen.trace(i));
    write_trace(written.back(), io);
  }
  const auto read = read_traces(io);
  ASSERT_EQ(read.size(), written.size());
  for (std::size_t i = 0; i < read.size(); ++i) EXPECT_EQ(read[i], written[i]) << "trace " << i;

  std::stringstream again;
  for (const auto& t : read) write_trace(t, again);
  EXPECT_EQ(again.str(), io.str());
}

}  // namespace
}  // namespace contamscope
