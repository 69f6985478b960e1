#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

namespace vdi::text {
namespace {

std::vector<NounChunkSpan> chunks(const std::string& s) {
  return extract_noun_chunks(QuerySentence::parse(s));
}

TEST(TokenizeTest, LowercasesAndStripsPunctuation) {
  EXPECT_EQ(tokenize("A Person, opens the DOOR."),
            (std::vector<std::string>{"a", "person", "opens", "the", "door"}));
  EXPECT_EQ(tokenize("  the person's  'cup' "),
            (std::vector<std::string>{"the", "person's", "cup"}));
  EXPECT_TRUE(tokenize(" ,.; ").empty());
}

TEST(QuerySentenceTest, JoinedTokensReproduceNormalizedRaw) {
  const auto q = QuerySentence::parse("person   opens\tthe door");
  EXPECT_EQ(q.normalized(), "person opens the door");
  EXPECT_THROW(QuerySentence::parse("  !! "), EmptyContent);
}

TEST(ChunkerTest, PersonOpensTheDoor) {
  EXPECT_EQ(chunks("person opens the door"),
            (std::vector<NounChunkSpan>{{0, 1}, {2, 4}}));
}

TEST(ChunkerTest, NoNounGivesNoChunks) { EXPECT_TRUE(chunks("runs quickly").empty()); }

TEST(ChunkerTest, AdjectiveRunFormsOneChunk) {
  EXPECT_EQ(chunks("the tall man"), (std::vector<NounChunkSpan>{{0, 3}}));
}

TEST(ChunkerTest, DeterminerAfterNounStartsNewChunk) {
  EXPECT_EQ(chunks("the man the door"), (std::vector<NounChunkSpan>{{0, 2}, {2, 4}}));
  EXPECT_EQ(chunks("person holds his cup"), (std::vector<NounChunkSpan>{{0, 1}, {2, 4}}));
}

TEST(ChunkerTest, TrailingModifiersAreNotIncluded) {
  // "the door" is a chunk; the dangling "the" after "opens" is not followed by a noun.
  EXPECT_EQ(chunks("the door opens the"), (std::vector<NounChunkSpan>{{0, 2}}));
}

TEST(ChunkerTest, CustomLexicon) {
  std::istringstream in("# toy\nwidget\tNOUN\nshiny\tADJ\n\n");
  const Lexicon lex = Lexicon::parse(in);
  EXPECT_EQ(lex.size(), 2u);
  RuleBasedChunker chunker(lex);
  EXPECT_EQ(chunker.extract(QuerySentence::parse("a shiny widget spins")),
            (std::vector<NounChunkSpan>{{1, 3}}));
}

TEST(ChunkerTest, MalformedLexiconLineReportsLine) {
  std::istringstream in("door\tNOUN\nbroken line\n");
  try {
    Lexicon::parse(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(ChunkerTest, ExternalBackendOutputIsValidated) {
  ExternalChunker good([](const QuerySentence&) { return std::vector<NounChunkSpan>{{0, 1}}; });
  EXPECT_EQ(good.extract(QuerySentence::parse("door opens")).size(), 1u);
  ExternalChunker overlapping(
      [](const QuerySentence&) { return std::vector<NounChunkSpan>{{0, 2}, {1, 2}}; });
  EXPECT_THROW(overlapping.extract(QuerySentence::parse("a b c")), Error);
  ExternalChunker out_of_range(
      [](const QuerySentence&) { return std::vector<NounChunkSpan>{{0, 5}}; });
  EXPECT_THROW(out_of_range.extract(QuerySentence::parse("a b")), Error);
}

TEST(MaskTest, PersonOpensTheDoor) {
  const auto q = QuerySentence::parse("person opens the door");
  const auto pair = make_masked_pair(q, {{0, 1}, {2, 4}});
  EXPECT_EQ(join(pair.static_query), "person [MASK] the door");
  EXPECT_EQ(join(pair.dynamic_query), "[MASK] opens [MASK] [MASK]");
}

TEST(MaskTest, AllOrNothingCoverageIsEmptyContent) {
  EXPECT_THROW(make_masked_pair(QuerySentence::parse("the door"), {{0, 2}}), EmptyContent);
  EXPECT_THROW(make_masked_pair(QuerySentence::parse("opens"), {}), EmptyContent);
  EXPECT_FALSE(try_masked_pair(QuerySentence::parse("runs quickly"), RuleBasedChunker()));
}

TEST(MaskTest, CustomMaskToken) {
  const auto pair = make_masked_pair(QuerySentence::parse("dog runs"), {{0, 1}}, "<m>");
  EXPECT_EQ(join(pair.static_query), "dog <m>");
  EXPECT_EQ(join(pair.dynamic_query), "<m> runs");
}

// Random sentences over a mixed vocabulary; the partition and unmasking
// properties must hold for every sentence that yields a masked pair.
TEST(MaskPropertyTest, PartitionAndRoundTripOnRandomSentences) {
  const std::vector<std::string> vocab = {"the", "a",    "his",  "tall",  "red",   "person",
                                          "door", "cup", "opens", "walks", "quickly", "into",
                                          "room", "and", "holds", "small", "dog",   "runs"};
  Rng rng(11);
  int checked = 0;
  for (int s = 0; s < 500; ++s) {
    std::string sentence;
    const int len = rng.range(1, 9);
    for (int k = 0; k < len; ++k) sentence += vocab[rng.below(vocab.size())] + " ";
    const auto q = QuerySentence::parse(sentence);
    const auto spans = extract_noun_chunks(q);
    validate_spans(spans, q.size());
    EXPECT_EQ(extract_noun_chunks(q), spans);
    for (const auto& sp : spans) {
      EXPECT_EQ(Lexicon::builtin().lookup(q.tokens[sp.end_token - 1]), WordClass::noun);
    }
    auto pair = try_masked_pair(q, RuleBasedChunker());
    if (!pair) continue;
    ++checked;
    ASSERT_EQ(pair->static_query.size(), q.size());
    ASSERT_EQ(pair->dynamic_query.size(), q.size());
    for (std::size_t p = 0; p < q.size(); ++p) {
      EXPECT_NE(pair->static_masked(p), pair->dynamic_masked(p));
    }
    EXPECT_EQ(pair->unmask(), q.tokens);
  }
  EXPECT_GT(checked, 100);
}

}  // namespace
}  // namespace vdi::text
