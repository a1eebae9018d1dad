#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcmatch/distant_labeler.hpp"
#include "dcmatch/synthetic.hpp"
#include "golden.hpp"
#include "oracles.hpp"

using namespace dcmatch;
namespace fs = std::filesystem;

namespace {

PosLexicon lexicon(std::initializer_list<std::pair<const char*, PosTag>> entries) {
  PosLexicon lex;
  for (const auto& [w, t] : entries) lex.set(w, t);
  return lex;
}

std::vector<std::string> toks(const char* s) { return tokenize(s); }

}  // namespace

TEST(LabelKeywords, LongestFullTermWins) {
  const std::vector<std::string> terms{"cell", "plant cell", "plant cell wall"};
  Gazetteer gaz(terms);
  const auto pos = lexicon({{"plant", PosTag::kNoun}, {"cell", PosTag::kNoun}, {"wall", PosTag::kNoun}});
  EXPECT_EQ(label_keywords(toks("a plant cell wall"), gaz, pos), (IOTags{false, true, true, true}));
  EXPECT_EQ(label_keywords(toks("a plant cell"), gaz, pos), (IOTags{false, true, true}));
  // "plant" alone is not a term
  EXPECT_EQ(label_keywords(toks("plant"), gaz, pos), (IOTags{false}));
}

TEST(LabelKeywords, FunctionWordsNeverInsideKeywords) {
  const std::vector<std::string> terms{"bank of america", "bank", "of"};
  Gazetteer gaz(terms);
  const auto pos = lexicon({{"bank", PosTag::kNoun}, {"america", PosTag::kNoun}});
  EXPECT_EQ(label_keywords(toks("bank of america"), gaz, pos), (IOTags{true, false, false}));
}

TEST(LabelKeywords, EmptyGazetteerTagsNothing) {
  Gazetteer gaz;
  EXPECT_TRUE(gaz.empty());
  const auto tags = label_keywords(toks("anything at all"), gaz, PosLexicon{});
  EXPECT_EQ(tags, (IOTags{false, false, false}));
}

TEST(LabelKeywords, GoldenFile) {
  const auto gaz = Gazetteer::load(golden::data_dir() / "golden_gazetteer.txt");
  const auto pos = PosLexicon::load(golden::data_dir() / "golden_pos.tsv");
  const auto cases = golden::load_tag_cases(golden::data_dir() / "golden_tags.tsv");
  ASSERT_EQ(cases.size(), 20u);
  for (const auto& c : cases) {
    const auto tokens = tokenize(c.text);
    ASSERT_EQ(tokens.size(), c.tags.size()) << c.text;
    EXPECT_EQ(label_keywords(tokens, gaz, pos), c.tags) << c.text;
  }
}

TEST(LabelKeywords, AgreesWithLongestFirstOracleOnSyntheticText) {
  const auto terms = synthetic::World::gazetteer_terms();
  Gazetteer gaz(terms);
  PosLexicon pos;
  for (const auto& [w, t] : synthetic::World::pos_lexicon()) pos.set(w, *parse_pos_tag(t));
  synthetic::Config cfg;
  cfg.num_classes = 3;
  cfg.train_size = 300;
  cfg.dev_size = 0;
  cfg.test_size = 0;
  for (const auto& p : synthetic::generate(cfg).train) {
    for (const auto* text : {&p.text_a, &p.text_b}) {
      const auto tokens = tokenize(*text);
      EXPECT_EQ(label_keywords(tokens, gaz, pos), oracle::longest_match_tags(tokens, terms, pos)) << *text;
    }
  }
}

TEST(LabelKeywords, RecoversGeneratorSpans) {
  Gazetteer gaz(synthetic::World::gazetteer_terms());
  PosLexicon pos;
  for (const auto& [w, t] : synthetic::World::pos_lexicon()) pos.set(w, *parse_pos_tag(t));
  synthetic::Config cfg;
  cfg.train_size = 200;
  cfg.dev_size = 0;
  cfg.test_size = 0;
  for (const auto& p : synthetic::generate(cfg).train) {
    const auto labeled = attach_keywords(p, gaz, pos);
    EXPECT_EQ(*labeled.keywords_a, *p.keywords_a) << p.text_a;
    EXPECT_EQ(*labeled.keywords_b, *p.keywords_b) << p.text_b;
  }
}

TEST(Spans, IoTagConversionRoundTrips) {
  const IOTags tags{false, true, true, false, true};
  const auto spans = io_tags_to_spans(tags);
  EXPECT_EQ(spans, (std::vector<Span>{{1, 3}, {4, 5}}));
  EXPECT_EQ(spans_to_io_tags(spans, tags.size()), tags);
  EXPECT_TRUE(io_tags_to_spans(IOTags{}).empty());
}

TEST(AttachKeywords, OverwritesExistingSpans) {
  const std::vector<std::string> terms{"cell"};
  Gazetteer gaz(terms);
  const auto pos = lexicon({{"cell", PosTag::kNoun}});
  SentencePair p{"the cell", "a cell here", 1, std::vector<Span>{{0, 1}}, std::vector<Span>{{0, 3}}};
  const auto once = attach_keywords(p, gaz, pos);
  EXPECT_EQ(*once.keywords_a, (std::vector<Span>{{1, 2}}));
  EXPECT_EQ(*once.keywords_b, (std::vector<Span>{{1, 2}}));
  const auto twice = attach_keywords(once, gaz, pos);
  EXPECT_EQ(*twice.keywords_a, *once.keywords_a);
  EXPECT_EQ(*twice.keywords_b, *once.keywords_b);
}

TEST(Resources, LoadErrors) {
  const auto dir = fs::temp_directory_path() / "dcmatch_labeler_res";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream(dir / "bad_pos.tsv") << "cell\tNOUN\nwall NOUN\n";
  }
  try {
    PosLexicon::load(dir / "bad_pos.tsv");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
  }
  {
    std::ofstream(dir / "bad_tag.tsv") << "cell\tPRONOUN\n";
  }
  EXPECT_THROW(PosLexicon::load(dir / "bad_tag.tsv"), ParseError);
  EXPECT_THROW(Gazetteer::load(dir / "missing.txt"), Error);
  Gazetteer g;
  EXPECT_THROW(g.add("[MASK] thing"), Error);
  g.add("  Plant   CELL ");
  EXPECT_TRUE(g.contains("plant cell"));
}

TEST(KeywordBleu, HandValues) {
  EXPECT_DOUBLE_EQ(keyword_bleu(toks("plant cell"), toks("plant cell")), 1.0);
  // p1 = 1/2, p2 = (0+1)/(1+1), higher orders empty -> 1, BP = 1
  EXPECT_NEAR(keyword_bleu(toks("plant cell"), toks("plant wall")), std::sqrt(0.5), 1e-12);
  EXPECT_DOUBLE_EQ(keyword_bleu(toks("solar panel"), toks("credit card")), 0.0);
  EXPECT_DOUBLE_EQ(keyword_bleu({}, {}), 1.0);
  EXPECT_DOUBLE_EQ(keyword_bleu(toks("cell"), {}), 0.0);
  EXPECT_DOUBLE_EQ(keyword_bleu({}, toks("cell")), 0.0);
  // brevity penalty: candidate "cell" against "plant cell": p1 = 1, BP = exp(1 - 2/1)
  EXPECT_NEAR(keyword_bleu(toks("cell"), toks("plant cell")), std::exp(-1.0), 1e-12);
}

TEST(CorpusStats, AveragesAndBleuSplit) {
  std::vector<SentencePair> pairs{
      {"a plant cell", "the plant cell", 1, std::vector<Span>{{1, 3}}, std::vector<Span>{{1, 3}}},
      {"a plant cell", "the solar panel", 0, std::vector<Span>{{1, 3}}, std::vector<Span>{{1, 3}}},
      {"cell and bank", "nothing", 0, std::vector<Span>{{0, 1}, {2, 3}}, std::vector<Span>{}}};
  const auto s = corpus_stats(pairs, LabelScheme::with_classes(2));
  // keywords per pair: (2 + 2 + 2) / 3; tokens per keyword: (2+2+2+2+1+1) / 6
  EXPECT_DOUBLE_EQ(s.avg_keywords_per_pair, 2.0);
  EXPECT_DOUBLE_EQ(s.avg_tokens_per_keyword, 10.0 / 6.0);
  ASSERT_TRUE(s.bleu_match && s.bleu_mismatch);
  EXPECT_DOUBLE_EQ(*s.bleu_match, 1.0);
  EXPECT_DOUBLE_EQ(*s.bleu_mismatch, 0.0);
}

TEST(CorpusStats, AdjacentSpansCountAsOneKeyword) {
  std::vector<SentencePair> pairs{{"plant cell wall", "x", 1, std::vector<Span>{{0, 2}, {2, 3}}, std::vector<Span>{}}};
  const auto s = corpus_stats(pairs, LabelScheme::with_classes(2));
  EXPECT_DOUBLE_EQ(s.avg_keywords_per_pair, 1.0);
  EXPECT_DOUBLE_EQ(s.avg_tokens_per_keyword, 3.0);
}

TEST(MaskSubproblem, ReplacesComplementaryGroup) {
  EncodedPair enc;
  enc.ids = {Vocab::kCls, 7, 8, Vocab::kSep, Vocab::kPad};
  enc.tags = {GroupTag::kSpecial, GroupTag::kIntent, GroupTag::kKeyword, GroupTag::kSpecial, GroupTag::kPad};
  enc.attn_mask = {1, 1, 1, 1, 0};
  const auto kw = mask_subproblem(enc, KeepGroup::kKeyword);
  EXPECT_EQ(kw.ids, (std::vector<int>{Vocab::kCls, Vocab::kMask, 8, Vocab::kSep, Vocab::kPad}));
  const auto in = mask_subproblem(enc, KeepGroup::kIntent);
  EXPECT_EQ(in.ids, (std::vector<int>{Vocab::kCls, 7, Vocab::kMask, Vocab::kSep, Vocab::kPad}));
  EXPECT_EQ(in.tags, enc.tags);
  EXPECT_EQ(in.attn_mask, enc.attn_mask);
}
