#pragma once

// Sentence-pair data model: tokenization, JSON-lines datasets, vocabulary,
// and the [CLS] a [SEP] b [SEP] encoding consumed by the encoder.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dcmatch/error.hpp"
#include "dcmatch/io.hpp"
#include <nlohmann/json.hpp>

namespace dcmatch {

using json = nlohmann::json;

// Ordinal match scale: class 0 is a mismatch, class K-1 an exact match.
struct LabelScheme {
  int num_classes = 2;
  std::vector<std::string> class_names;

  static LabelScheme with_classes(int k) {
    LabelScheme s;
    s.num_classes = k;
    if (k == 2) {
      s.class_names = {"mismatch", "match"};
    } else if (k == 3) {
      s.class_names = {"mismatch", "partial match", "exact match"};
    } else {
      for (int i = 0; i < k; ++i) s.class_names.push_back("degree " + std::to_string(i));
    }
    s.validate();
    return s;
  }

  void validate() const {
    if (num_classes < 2) throw Error("label scheme needs at least 2 classes");
    if (!class_names.empty() && static_cast<int>(class_names.size()) != num_classes)
      throw Error("label scheme: class name count does not match num_classes");
  }

  int top() const { return num_classes - 1; }
  bool contains(int label) const { return label >= 0 && label < num_classes; }
};

// Half-open token range [begin, end) inside one sentence.
struct Span {
  int begin = 0;
  int end = 0;

  int size() const { return end - begin; }
  bool operator==(const Span&) const = default;
};

struct SentencePair {
  std::string text_a;
  std::string text_b;
  int label = 0;
  // Present only once distant keyword labels have been attached.
  std::optional<std::vector<Span>> keywords_a;
  std::optional<std::vector<Span>> keywords_b;

  bool has_keywords() const { return keywords_a.has_value() && keywords_b.has_value(); }
};

// ---------------------------------------------------------------------------
// Tokenizer: lowercase, split on Unicode whitespace, detach ASCII punctuation.

namespace detail {

inline bool is_unicode_space(char32_t cp) {
  switch (cp) {
    case U' ': case U'\t': case U'\n': case U'\v': case U'\f': case U'\r':
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

// Decodes one UTF-8 code point at `i`; malformed bytes decode as themselves.
inline char32_t decode_utf8(std::string_view s, std::size_t i, std::size_t& len) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) {
    return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
  };
  auto byte = [&](std::size_t k) { return static_cast<char32_t>(static_cast<unsigned char>(s[i + k]) & 0x3F); };
  if (b0 < 0x80) {
    len = 1;
    return b0;
  }
  if ((b0 & 0xE0) == 0xC0 && cont(1)) {
    len = 2;
    return (static_cast<char32_t>(b0 & 0x1F) << 6) | byte(1);
  }
  if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
    len = 3;
    return (static_cast<char32_t>(b0 & 0x0F) << 12) | (byte(1) << 6) | byte(2);
  }
  if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
    len = 4;
    return (static_cast<char32_t>(b0 & 0x07) << 18) | (byte(1) << 12) | (byte(2) << 6) | byte(3);
  }
  len = 1;
  return b0;
}

}  // namespace detail

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    std::size_t len = 1;
    const char32_t cp = detail::decode_utf8(text, i, len);
    if (detail::is_unicode_space(cp)) {
      flush();
    } else if (cp < 0x80 && std::ispunct(static_cast<int>(cp))) {
      flush();
      tokens.emplace_back(1, static_cast<char>(cp));
    } else if (cp < 0x80) {
      current.push_back(static_cast<char>(std::tolower(static_cast<int>(cp))));
    } else {
      current.append(text.substr(i, len));
    }
    i += len;
  }
  flush();
  return tokens;
}

inline std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files: one JSON object per line.

inline void validate_spans(const std::vector<Span>& spans, int num_tokens, const std::string& where) {
  int prev_end = 0;
  for (const auto& s : spans) {
    if (s.begin < prev_end || s.begin >= s.end || s.end > num_tokens)
      throw Error(where + ": keyword spans must be sorted, non-overlapping, non-empty and within " +
                  std::to_string(num_tokens) + " tokens");
    prev_end = s.end;
  }
}

inline json spans_to_json(const std::vector<Span>& spans) {
  json arr = json::array();
  for (const auto& s : spans) arr.push_back({s.begin, s.end});
  return arr;
}

inline std::vector<Span> spans_from_json(const json& j) {
  if (!j.is_array()) throw Error("keyword spans must be an array of [start,end] pairs");
  std::vector<Span> spans;
  for (const auto& item : j) {
    if (!item.is_array() || item.size() != 2 || !item[0].is_number_integer() || !item[1].is_number_integer())
      throw Error("keyword span must be a [start,end] integer pair");
    spans.push_back({item[0].get<int>(), item[1].get<int>()});
  }
  return spans;
}

inline json pair_to_json(const SentencePair& p) {
  json j = {{"text_a", p.text_a}, {"text_b", p.text_b}, {"label", p.label}};
  if (p.keywords_a) j["keywords_a"] = spans_to_json(*p.keywords_a);
  if (p.keywords_b) j["keywords_b"] = spans_to_json(*p.keywords_b);
  return j;
}

// Parses one dataset record. `where` prefixes error messages.
inline SentencePair pair_from_json(const json& j, const LabelScheme& scheme, const std::string& where) {
  if (!j.is_object()) throw Error(where + ": record is not a JSON object");
  for (const char* key : {"text_a", "text_b"})
    if (!j.contains(key) || !j[key].is_string()) throw Error(where + ": missing string field '" + key + "'");
  if (!j.contains("label") || !j["label"].is_number_integer()) throw Error(where + ": missing integer field 'label'");

  SentencePair p;
  p.text_a = j["text_a"].get<std::string>();
  p.text_b = j["text_b"].get<std::string>();
  p.label = j["label"].get<int>();
  if (!scheme.contains(p.label))
    throw Error(where + ": label out of range (" + std::to_string(p.label) + " not in [0," +
                std::to_string(scheme.num_classes) + "))");
  if (j.contains("keywords_a")) {
    p.keywords_a = spans_from_json(j["keywords_a"]);
    validate_spans(*p.keywords_a, static_cast<int>(tokenize(p.text_a).size()), where + " keywords_a");
  }
  if (j.contains("keywords_b")) {
    p.keywords_b = spans_from_json(j["keywords_b"]);
    validate_spans(*p.keywords_b, static_cast<int>(tokenize(p.text_b).size()), where + " keywords_b");
  }
  return p;
}

inline std::vector<SentencePair> load_dataset(const std::filesystem::path& path, const LabelScheme& scheme) {
  scheme.validate();
  const auto lines = io::read_lines(path);
  std::vector<SentencePair> pairs;
  pairs.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const long lineno = static_cast<long>(i) + 1;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string(), lineno, std::string("malformed JSON: ") + e.what());
    }
    try {
      pairs.push_back(pair_from_json(j, scheme, "record " + std::to_string(pairs.size())));
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  return pairs;
}

inline void save_dataset(const std::filesystem::path& path, std::span<const SentencePair> pairs) {
  io::write_atomically(path, [&](std::ostream& out) {
    for (const auto& p : pairs) out << pair_to_json(p).dump() << '\n';
  });
}

// ---------------------------------------------------------------------------
// Vocabulary

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumReserved = 5;

  Vocab() {
    for (const char* t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"}) add(t);
  }

  int add(const std::string& token) {
    auto [it, inserted] = index_.emplace(token, static_cast<int>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  int id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

  const std::string& token(int id) const {
    if (id < 0 || id >= size()) throw Error("vocab id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  // FNV-1a over tokens in id order; ties a checkpoint to the vocabulary it was trained with.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& t : tokens_) {
      for (unsigned char c : t) {
        h ^= c;
        h *= 1099511628211ULL;
      }
      h ^= 0xFF;
      h *= 1099511628211ULL;
    }
    return h;
  }

  json to_json() const {
    json j = json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = static_cast<int>(i);
    return j;
  }

  static Vocab from_json(const json& j) {
    if (!j.is_object()) throw Error("vocab file must be a JSON object {token: id}");
    std::vector<std::pair<int, std::string>> entries;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!it.value().is_number_integer()) throw Error("vocab id for '" + it.key() + "' is not an integer");
      entries.emplace_back(it.value().get<int>(), it.key());
    }
    std::sort(entries.begin(), entries.end());
    Vocab v;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].first != static_cast<int>(i)) throw Error("vocab ids must be contiguous from 0");
      if (i < kNumReserved) {
        if (v.tokens_[i] != entries[i].second)
          throw Error("vocab reserved id " + std::to_string(i) + " must be " + v.tokens_[i]);
      } else if (v.add(entries[i].second) != static_cast<int>(i)) {
        throw Error("duplicate vocab token '" + entries[i].second + "'");
      }
    }
    return v;
  }

  static Vocab load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open vocab " + path.string());
    try {
      return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
      throw Error("malformed vocab " + path.string() + ": " + e.what());
    }
  }

  void save(const std::filesystem::path& path) const { io::write_text_atomically(path, to_json().dump(1) + "\n"); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Ids by descending frequency, ties lexicographic.
inline Vocab build_vocab(std::span<const SentencePair> pairs, int min_freq) {
  if (pairs.empty()) throw Error("build_vocab: empty corpus");
  if (min_freq < 1) throw Error("build_vocab: min_freq must be >= 1");
  std::map<std::string, long> freq;
  for (const auto& p : pairs) {
    for (const auto* text : {&p.text_a, &p.text_b})
      for (auto& t : tokenize(*text)) ++freq[t];
  }
  std::vector<std::pair<std::string, long>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& x, const auto& y) { return x.second > y.second; });
  Vocab v;
  for (const auto& [tok, n] : ranked)
    if (n >= min_freq) v.add(tok);
  return v;
}

// ---------------------------------------------------------------------------
// Pair encoding

enum class GroupTag : std::uint8_t { kKeyword, kIntent, kSpecial, kPad };

struct EncodedPair {
  std::vector<int> ids;
  std::vector<GroupTag> tags;
  std::vector<std::uint8_t> attn_mask;  // 1 on real tokens, 0 on PAD
  int label = 0;

  int length() const { return static_cast<int>(ids.size()); }
};

// Sentence token budgets after proportional prefix truncation.
inline std::pair<int, int> truncated_lengths(int len_a, int len_b, int budget) {
  if (len_a + len_b <= budget) return {len_a, len_b};
  const double share = static_cast<double>(len_a) / (len_a + len_b);
  int keep_a = static_cast<int>(budget * share);
  keep_a = std::clamp(keep_a, std::min(len_a, 1), std::min(len_a, budget - std::min(len_b, 1)));
  int keep_b = std::min(len_b, budget - keep_a);
  keep_a = std::min(len_a, budget - keep_b);
  return {keep_a, keep_b};
}

namespace detail {

inline std::vector<bool> keyword_mask(const std::optional<std::vector<Span>>& spans, std::size_t n) {
  std::vector<bool> mask(n, false);
  if (!spans) return mask;
  for (const auto& s : *spans)
    for (int i = std::max(0, s.begin); i < s.end && i < static_cast<int>(n); ++i) mask[static_cast<std::size_t>(i)] = true;
  return mask;
}

inline EncodedPair encode_tokens(const std::vector<std::string>& toks_a, const std::vector<std::string>& toks_b,
                                 const std::vector<bool>& kw_a, const std::vector<bool>& kw_b, int label,
                                 const Vocab& vocab, int max_len) {
  if (max_len < 5) throw Error("encode_pair: max_len must be >= 5, got " + std::to_string(max_len));
  const auto [keep_a, keep_b] = truncated_lengths(static_cast<int>(toks_a.size()),
                                                  static_cast<int>(toks_b.size()), max_len - 3);
  EncodedPair enc;
  enc.label = label;
  enc.ids.reserve(static_cast<std::size_t>(max_len));
  auto push = [&](int id, GroupTag tag) {
    enc.ids.push_back(id);
    enc.tags.push_back(tag);
    enc.attn_mask.push_back(tag == GroupTag::kPad ? 0 : 1);
  };
  push(Vocab::kCls, GroupTag::kSpecial);
  for (int i = 0; i < keep_a; ++i)
    push(vocab.id(toks_a[static_cast<std::size_t>(i)]), kw_a[static_cast<std::size_t>(i)] ? GroupTag::kKeyword : GroupTag::kIntent);
  push(Vocab::kSep, GroupTag::kSpecial);
  for (int i = 0; i < keep_b; ++i)
    push(vocab.id(toks_b[static_cast<std::size_t>(i)]), kw_b[static_cast<std::size_t>(i)] ? GroupTag::kKeyword : GroupTag::kIntent);
  push(Vocab::kSep, GroupTag::kSpecial);
  while (enc.length() < max_len) push(Vocab::kPad, GroupTag::kPad);
  return enc;
}

}  // namespace detail

// Layout [CLS, a..., SEP, b..., SEP, PAD...]. Tokens inside keyword spans are
// tagged KEYWORD, other sentence tokens INTENT.
inline EncodedPair encode_pair(const SentencePair& pair, const Vocab& vocab, int max_len) {
  const auto toks_a = tokenize(pair.text_a);
  const auto toks_b = tokenize(pair.text_b);
  return detail::encode_tokens(toks_a, toks_b, detail::keyword_mask(pair.keywords_a, toks_a.size()),
                               detail::keyword_mask(pair.keywords_b, toks_b.size()), pair.label, vocab, max_len);
}

// Encoding from raw text alone; used on the inference path, which never sees keyword annotations.
inline EncodedPair encode_text_pair(std::string_view text_a, std::string_view text_b, const Vocab& vocab, int max_len) {
  const auto toks_a = tokenize(text_a);
  const auto toks_b = tokenize(text_b);
  return detail::encode_tokens(toks_a, toks_b, std::vector<bool>(toks_a.size(), false),
                               std::vector<bool>(toks_b.size(), false), 0, vocab, max_len);
}

// Tokens of the non-special, non-PAD positions, split at the first SEP.
inline std::pair<std::vector<std::string>, std::vector<std::string>> decode_pair(const EncodedPair& enc,
                                                                                const Vocab& vocab) {
  std::pair<std::vector<std::string>, std::vector<std::string>> out;
  int seps = 0;
  for (int i = 0; i < enc.length(); ++i) {
    const auto tag = enc.tags[static_cast<std::size_t>(i)];
    if (tag == GroupTag::kSpecial) {
      if (enc.ids[static_cast<std::size_t>(i)] == Vocab::kSep) ++seps;
      continue;
    }
    if (tag == GroupTag::kPad) continue;
    (seps == 0 ? out.first : out.second).push_back(vocab.token(enc.ids[static_cast<std::size_t>(i)]));
  }
  return out;
}

}  // namespace dcmatch
