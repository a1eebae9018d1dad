#pragma once

// Distant keyword supervision: gazetteer longest-match IO tagging, keyword
// BLEU statistics, and the keyword-only / intent-only masked views.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dcmatch/corpus.hpp"
#include "dcmatch/instrumentation.hpp"

namespace dcmatch {

class Gazetteer {
 public:
  Gazetteer() = default;

  explicit Gazetteer(std::span<const std::string> terms) {
    for (const auto& t : terms) add(t);
  }

  // Terms are normalized through the tokenizer, so "Animal  Cell" == "animal cell".
  void add(std::string_view term) {
    const auto toks = tokenize(term);
    if (toks.empty()) return;
    const auto joined = join_tokens(toks);
    for (const char* reserved : {"[ pad ]", "[ unk ]", "[ cls ]", "[ sep ]", "[ mask ]"})
      if (joined.find(reserved) != std::string::npos)
        throw Error("gazetteer term contains a reserved token: " + std::string(term));
    entries_.insert(joined);
    max_term_len_ = std::max(max_term_len_, static_cast<int>(toks.size()));
  }

  bool contains(std::string_view joined) const { return entries_.count(std::string(joined)) != 0; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  int max_term_len() const { return max_term_len_; }

  // One term per line; blank lines ignored.
  static Gazetteer load(const std::filesystem::path& path) {
    Gazetteer g;
    for (const auto& line : io::read_lines(path)) g.add(line);
    return g;
  }

 private:
  std::unordered_set<std::string> entries_;
  int max_term_len_ = 0;
};

enum class PosTag : std::uint8_t { kNoun, kVerb, kAdj, kOther };

inline std::optional<PosTag> parse_pos_tag(std::string_view s) {
  if (s == "NOUN") return PosTag::kNoun;
  if (s == "VERB") return PosTag::kVerb;
  if (s == "ADJ") return PosTag::kAdj;
  if (s == "OTHER") return PosTag::kOther;
  return std::nullopt;
}

// Static word -> coarse tag table; unknown words are OTHER.
class PosLexicon {
 public:
  void set(const std::string& word, PosTag tag) { tags_[word] = tag; }

  PosTag tag(const std::string& word) const {
    auto it = tags_.find(word);
    return it == tags_.end() ? PosTag::kOther : it->second;
  }

  bool content_word(const std::string& word) const { return tag(word) != PosTag::kOther; }

  std::size_t size() const { return tags_.size(); }

  // Lines of "word<TAB>TAG".
  static PosLexicon load(const std::filesystem::path& path) {
    PosLexicon lex;
    long lineno = 0;
    for (const auto& line : io::read_lines(path)) {
      ++lineno;
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw ParseError(path.string(), lineno, "expected word<TAB>TAG");
      const auto tag = parse_pos_tag(line.substr(tab + 1));
      if (!tag) throw ParseError(path.string(), lineno, "unknown POS tag '" + line.substr(tab + 1) + "'");
      const auto toks = tokenize(line.substr(0, tab));
      if (toks.size() != 1) throw ParseError(path.string(), lineno, "lexicon word must be a single token");
      lex.set(toks.front(), *tag);
    }
    return lex;
  }

 private:
  std::unordered_map<std::string, PosTag> tags_;
};

// true = I (keyword), false = O (intent).
using IOTags = std::vector<bool>;

// Greedy longest match, left to right. A candidate span qualifies only if it is
// a full gazetteer term and every token is a noun, verb or adjective.
inline IOTags label_keywords(std::span<const std::string> tokens, const Gazetteer& gaz, const PosLexicon& pos) {
  IOTags tags(tokens.size(), false);
  const int n = static_cast<int>(tokens.size());
  int i = 0;
  while (i < n) {
    int matched = 0;
    std::string joined;
    const int limit = std::min(gaz.max_term_len(), n - i);
    for (int len = 1; len <= limit; ++len) {
      const auto& tok = tokens[static_cast<std::size_t>(i + len - 1)];
      if (!pos.content_word(tok)) break;
      if (len > 1) joined.push_back(' ');
      joined += tok;
      if (gaz.contains(joined)) matched = len;
    }
    if (matched > 0) {
      std::fill(tags.begin() + i, tags.begin() + i + matched, true);
      i += matched;
    } else {
      ++i;
    }
  }
  return tags;
}

inline std::vector<Span> io_tags_to_spans(const IOTags& tags) {
  std::vector<Span> spans;
  const int n = static_cast<int>(tags.size());
  for (int i = 0; i < n;) {
    if (!tags[static_cast<std::size_t>(i)]) {
      ++i;
      continue;
    }
    int j = i;
    while (j < n && tags[static_cast<std::size_t>(j)]) ++j;
    spans.push_back({i, j});
    i = j;
  }
  return spans;
}

inline IOTags spans_to_io_tags(const std::vector<Span>& spans, std::size_t n) {
  IOTags tags(n, false);
  for (const auto& s : spans)
    for (int i = s.begin; i < s.end; ++i) tags[static_cast<std::size_t>(i)] = true;
  return tags;
}

// Replaces any existing keyword annotations.
inline SentencePair attach_keywords(const SentencePair& pair, const Gazetteer& gaz, const PosLexicon& pos) {
  SentencePair out = pair;
  out.keywords_a = io_tags_to_spans(label_keywords(tokenize(pair.text_a), gaz, pos));
  out.keywords_b = io_tags_to_spans(label_keywords(tokenize(pair.text_b), gaz, pos));
  return out;
}

// ---------------------------------------------------------------------------
// Keyword BLEU

// Sentence BLEU-4 of `candidate` against `reference`: clipped n-gram
// precisions, add-one smoothing for orders >= 2, standard brevity penalty.
// Both empty -> 1, exactly one empty -> 0.
inline double keyword_bleu(std::span<const std::string> candidate, std::span<const std::string> reference) {
  if (candidate.empty() && reference.empty()) return 1.0;
  if (candidate.empty() || reference.empty()) return 0.0;
  constexpr int kMaxOrder = 4;
  double log_sum = 0.0;
  for (int n = 1; n <= kMaxOrder; ++n) {
    std::map<std::vector<std::string>, int> ref_counts;
    for (std::size_t i = 0; i + n <= reference.size(); ++i)
      ++ref_counts[std::vector<std::string>(reference.begin() + i, reference.begin() + i + n)];
    std::map<std::vector<std::string>, int> cand_counts;
    int total = 0;
    for (std::size_t i = 0; i + n <= candidate.size(); ++i) {
      ++cand_counts[std::vector<std::string>(candidate.begin() + i, candidate.begin() + i + n)];
      ++total;
    }
    int clipped = 0;
    for (const auto& [gram, c] : cand_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) clipped += std::min(c, it->second);
    }
    double precision;
    if (n == 1) {
      if (clipped == 0) return 0.0;
      precision = static_cast<double>(clipped) / total;
    } else {
      precision = (clipped + 1.0) / (total + 1.0);
    }
    log_sum += std::log(precision);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return std::clamp(bp * std::exp(log_sum / kMaxOrder), 0.0, 1.0);
}

struct KeywordStats {
  double avg_keywords_per_pair = 0.0;
  double avg_tokens_per_keyword = 0.0;
  std::optional<double> bleu_match;     // absent when there are no K-1 pairs
  std::optional<double> bleu_mismatch;  // absent when there are no label-0 pairs
  long num_pairs = 0;

  json to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"avg_keywords_per_pair", avg_keywords_per_pair},
            {"avg_tokens_per_keyword", avg_tokens_per_keyword},
            {"bleu_match", opt(bleu_match)},
            {"bleu_mismatch", opt(bleu_mismatch)},
            {"num_pairs", num_pairs}};
  }
};

inline std::vector<std::string> keyword_tokens(const std::vector<std::string>& tokens, const std::vector<Span>& spans) {
  std::vector<std::string> out;
  for (const auto& s : spans)
    for (int i = s.begin; i < s.end && i < static_cast<int>(tokens.size()); ++i) out.push_back(tokens[static_cast<std::size_t>(i)]);
  return out;
}

// Keyword BLEU of a pair, sentence b as reference.
inline double pair_keyword_bleu(const SentencePair& p) {
  if (!p.has_keywords()) throw Error("pair_keyword_bleu: pair has no keyword annotations");
  return keyword_bleu(keyword_tokens(tokenize(p.text_a), *p.keywords_a), keyword_tokens(tokenize(p.text_b), *p.keywords_b));
}

inline KeywordStats corpus_stats(std::span<const SentencePair> pairs, const LabelScheme& scheme) {
  KeywordStats stats;
  long keywords = 0;
  long keyword_tokens_total = 0;
  double match_sum = 0, mismatch_sum = 0;
  long match_n = 0, mismatch_n = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (!p.has_keywords()) throw Error("corpus_stats: record " + std::to_string(i) + " has no keyword tags");
    for (const auto* spans : {&*p.keywords_a, &*p.keywords_b}) {
      // adjacent spans are one I-run under IO tagging
      int prev_end = -1;
      for (const auto& s : *spans) {
        if (s.begin != prev_end) ++keywords;
        keyword_tokens_total += s.size();
        prev_end = s.end;
      }
    }
    if (p.label == scheme.top()) {
      match_sum += pair_keyword_bleu(p);
      ++match_n;
    } else if (p.label == 0) {
      mismatch_sum += pair_keyword_bleu(p);
      ++mismatch_n;
    }
  }
  stats.num_pairs = static_cast<long>(pairs.size());
  if (!pairs.empty()) stats.avg_keywords_per_pair = static_cast<double>(keywords) / static_cast<double>(pairs.size());
  if (keywords > 0) stats.avg_tokens_per_keyword = static_cast<double>(keyword_tokens_total) / static_cast<double>(keywords);
  if (match_n > 0) stats.bleu_match = match_sum / static_cast<double>(match_n);
  if (mismatch_n > 0) stats.bleu_mismatch = mismatch_sum / static_cast<double>(mismatch_n);
  return stats;
}

// ---------------------------------------------------------------------------
// Sub-problem masking

enum class KeepGroup { kKeyword, kIntent };

// Replaces the complementary group's tokens with [MASK]; SPECIAL and PAD
// positions, tags, mask and label are untouched.
inline EncodedPair mask_subproblem(const EncodedPair& enc, KeepGroup keep) {
  instrumentation::counters().mask_calls.fetch_add(1, std::memory_order_relaxed);
  const GroupTag drop = keep == KeepGroup::kKeyword ? GroupTag::kIntent : GroupTag::kKeyword;
  EncodedPair out = enc;
  for (std::size_t i = 0; i < out.ids.size(); ++i)
    if (out.tags[i] == drop) out.ids[i] = Vocab::kMask;
  return out;
}

}  // namespace dcmatch
