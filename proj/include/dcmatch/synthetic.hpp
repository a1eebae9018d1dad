#pragma once

// Synthetic keyword/intent matching corpus with known ground truth.
//
// Each sentence is a paraphrase frame carrying an intent verb and a keyword
// term, e.g. "how do i repair a solar panel". Keyword relatedness and intent
// relatedness are each graded on the ordinal scale, and the gold label is the
// minimum of the two degrees.

#include <array>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dcmatch/corpus.hpp"

namespace dcmatch::synthetic {

struct Config {
  int num_classes = 2;
  int train_size = 5000;
  int dev_size = 500;
  int test_size = 500;
  std::uint64_t seed = 1;
  // Per-class target fractions; empty means uniform.
  std::vector<double> label_mixture;
  // For binary data: fraction of keyword/intent mismatches drawn from a
  // closely related item (shared head word, same intent family).
  double near_miss_rate = 0.5;

  void validate() const {
    if (num_classes != 2 && num_classes != 3) throw Error("synthetic: num_classes must be 2 or 3");
    if (train_size < 0 || dev_size < 0 || test_size < 0) throw Error("synthetic: split sizes must be >= 0");
    if (!label_mixture.empty()) {
      if (static_cast<int>(label_mixture.size()) != num_classes)
        throw Error("synthetic: label_mixture needs one weight per class");
      double total = 0;
      for (double w : label_mixture) {
        if (!(w >= 0)) throw Error("synthetic: label_mixture weights must be >= 0");
        total += w;
      }
      if (total <= 0) throw Error("synthetic: label_mixture must have positive mass");
    }
    if (near_miss_rate < 0 || near_miss_rate > 1) throw Error("synthetic: near_miss_rate must be in [0,1]");
  }

  std::vector<double> mixture() const {
    if (label_mixture.empty()) return std::vector<double>(static_cast<std::size_t>(num_classes), 1.0 / num_classes);
    const double total = std::accumulate(label_mixture.begin(), label_mixture.end(), 0.0);
    std::vector<double> m;
    for (double w : label_mixture) m.push_back(w / total);
    return m;
  }
};

struct Term {
  int modifier = -1;  // -1: bare head noun
  int head = 0;
};

struct Intent {
  int family = 0;
  int index = 0;  // intent within family
};

// Vocabulary of the synthetic world: keyword terms, intents and frames.
class World {
 public:
  static constexpr std::array<const char*, 24> kModifiers = {
      "animal", "plant",   "solar",   "electric", "digital", "mobile",   "medical",  "public",
      "private", "federal", "foreign", "organic",  "chemical", "nuclear", "urban",   "rural",
      "ocean",  "mountain", "desert",  "winter",   "summer",  "credit",   "savings",  "wireless"};
  static constexpr std::array<const char*, 24> kHeads = {
      "cell",    "engine", "bank",   "network", "battery", "license", "insurance", "policy",
      "market",  "energy", "account", "school", "garden",  "bridge",  "vaccine",   "tower",
      "station", "card",   "loan",   "panel",  "sensor",  "camera",  "visa",      "reactor"};
  // families x intents x synonyms
  static constexpr std::array<std::array<std::array<const char*, 2>, 2>, 8> kVerbs = {{
      {{{"buy", "purchase"}, {"rent", "hire"}}},
      {{{"repair", "fix"}, {"maintain", "service"}}},
      {{{"understand", "learn"}, {"explain", "describe"}}},
      {{{"build", "construct"}, {"design", "plan"}}},
      {{{"sell", "auction"}, {"recycle", "dispose"}}},
      {{{"protect", "secure"}, {"insure", "cover"}}},
      {{{"compare", "contrast"}, {"evaluate", "assess"}}},
      {{{"find", "locate"}, {"choose", "pick"}}},
  }};
  // {v} marks the verb slot, {k} the keyword slot.
  static constexpr std::array<const char*, 8> kFrames = {
      "how do i {v} a {k}",
      "what is the best way to {v} a {k}",
      "how can someone {v} the {k}",
      "is it possible to {v} my {k} ?",
      "any tips to {v} a {k} ?",
      "where can i {v} a {k}",
      "how should i {v} the {k} ?",
      "what does it take to {v} a {k}"};
  static constexpr int kNumFamilies = static_cast<int>(kVerbs.size());
  static constexpr int kIntentsPerFamily = 2;

  explicit World(int num_classes) : num_classes_(num_classes) {
    if (num_classes != 2 && num_classes != 3) throw Error("synthetic world supports 2 or 3 classes");
  }

  int num_classes() const { return num_classes_; }

  static std::vector<std::string> term_tokens(const Term& t) {
    std::vector<std::string> out;
    if (t.modifier >= 0) out.emplace_back(kModifiers[static_cast<std::size_t>(t.modifier)]);
    out.emplace_back(kHeads[static_cast<std::size_t>(t.head)]);
    return out;
  }

  static std::string verb(const Intent& i, int synonym) {
    return kVerbs[static_cast<std::size_t>(i.family)][static_cast<std::size_t>(i.index)][static_cast<std::size_t>(synonym)];
  }

  // Graded relatedness on a 3-level scale (2 same, 1 related, 0 unrelated),
  // folded onto the configured number of classes.
  int keyword_degree(const Term& a, const Term& b) const {
    int level = 0;
    if (a.modifier == b.modifier && a.head == b.head) level = 2;
    else if (a.head == b.head || (a.modifier >= 0 && a.modifier == b.modifier)) level = 1;
    return fold(level);
  }

  int intent_degree(const Intent& a, const Intent& b) const {
    int level = 0;
    if (a.family == b.family && a.index == b.index) level = 2;
    else if (a.family == b.family) level = 1;
    return fold(level);
  }

  struct Sentence {
    std::string text;
    Span keyword;
  };

  static Sentence render(int frame, const Intent& intent, int synonym, const Term& term) {
    Sentence s;
    const std::string pattern = kFrames[static_cast<std::size_t>(frame)];
    std::istringstream words(pattern);
    std::string w;
    int pos = 0;
    std::vector<std::string> out;
    while (words >> w) {
      if (w == "{v}") {
        out.push_back(verb(intent, synonym));
        ++pos;
      } else if (w == "{k}") {
        const auto toks = term_tokens(term);
        s.keyword = {pos, pos + static_cast<int>(toks.size())};
        for (const auto& t : toks) out.push_back(t);
        pos += static_cast<int>(toks.size());
      } else {
        out.push_back(w);
        ++pos;
      }
    }
    s.text = join_tokens(out);
    return s;
  }

  struct Side {
    int frame = 0;
    Intent intent;
    int synonym = 0;
    Term term;
  };

  SentencePair make_pair(const Side& a, const Side& b) const {
    const auto sa = render(a.frame, a.intent, a.synonym, a.term);
    const auto sb = render(b.frame, b.intent, b.synonym, b.term);
    SentencePair p;
    p.text_a = sa.text;
    p.text_b = sb.text;
    p.label = std::min(keyword_degree(a.term, b.term), intent_degree(a.intent, b.intent));
    p.keywords_a = std::vector<Span>{sa.keyword};
    p.keywords_b = std::vector<Span>{sb.keyword};
    return p;
  }

  // All gazetteer terms, lowercased, one per entry.
  static std::vector<std::string> gazetteer_terms() {
    std::vector<std::string> out;
    for (const auto* h : kHeads) out.emplace_back(h);
    for (const auto* m : kModifiers)
      for (const auto* h : kHeads) out.push_back(std::string(m) + " " + h);
    return out;
  }

  // Word -> coarse POS tag; frame words are left to the lexicon default.
  static std::vector<std::pair<std::string, std::string>> pos_lexicon() {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto* m : kModifiers) out.emplace_back(m, "ADJ");
    for (const auto* h : kHeads) out.emplace_back(h, "NOUN");
    for (const auto& fam : kVerbs)
      for (const auto& intent : fam)
        for (const auto* v : intent) out.emplace_back(v, "VERB");
    return out;
  }

 private:
  int fold(int level) const {
    if (num_classes_ == 3) return level;
    return level == 2 ? 1 : 0;
  }

  int num_classes_;
};

struct Corpus {
  std::vector<SentencePair> train;
  std::vector<SentencePair> dev;
  std::vector<SentencePair> test;
};

namespace detail {

class Sampler {
 public:
  Sampler(const World& world, const Config& cfg, std::mt19937_64& rng) : world_(world), cfg_(cfg), rng_(rng) {}

  int uniform(int n) { return static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(rng_)); }
  bool coin(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }

  Term any_term() {
    // one bare head per four terms keeps both term shapes common
    Term t;
    t.head = uniform(static_cast<int>(World::kHeads.size()));
    t.modifier = coin(0.25) ? -1 : uniform(static_cast<int>(World::kModifiers.size()));
    return t;
  }

  Intent any_intent() { return {uniform(World::kNumFamilies), uniform(World::kIntentsPerFamily)}; }

  // Term whose keyword degree against `a` is exactly `degree`.
  Term term_with_degree(const Term& a, int degree) {
    const int top = world_.num_classes() - 1;
    for (;;) {
      Term b;
      if (degree == top) {
        b = a;
      } else if (world_.num_classes() == 3 ? degree == 1 : coin(cfg_.near_miss_rate)) {
        b = a;
        // same head, different modifier (possibly bare)
        do {
          b.modifier = coin(0.25) ? -1 : uniform(static_cast<int>(World::kModifiers.size()));
        } while (b.modifier == a.modifier);
      } else {
        b = any_term();
      }
      if (world_.keyword_degree(a, b) == degree) return b;
    }
  }

  Intent intent_with_degree(const Intent& a, int degree) {
    const int top = world_.num_classes() - 1;
    for (;;) {
      Intent b;
      if (degree == top) {
        b = a;
      } else if (world_.num_classes() == 3 ? degree == 1 : coin(cfg_.near_miss_rate)) {
        b = {a.family, 1 - a.index};
      } else {
        b = any_intent();
      }
      if (world_.intent_degree(a, b) == degree) return b;
    }
  }

  SentencePair pair_with_label(int label) {
    const int top = world_.num_classes() - 1;
    int kw = top;
    int in = top;
    if (label < top) {
      // one sub-problem sits exactly at `label`, the other anywhere at or above it
      const int other = label + uniform(top - label + 1);
      if (coin(0.5)) {
        kw = label;
        in = other;
      } else {
        in = label;
        kw = other;
      }
    }
    World::Side a;
    World::Side b;
    a.frame = uniform(static_cast<int>(World::kFrames.size()));
    b.frame = uniform(static_cast<int>(World::kFrames.size()));
    a.intent = any_intent();
    b.intent = intent_with_degree(a.intent, in);
    a.synonym = uniform(2);
    b.synonym = uniform(2);
    a.term = any_term();
    b.term = term_with_degree(a.term, kw);
    return world_.make_pair(a, b);
  }

 private:
  const World& world_;
  const Config& cfg_;
  std::mt19937_64& rng_;
};

// Exact per-class counts whose sum is n (largest remainder rounding).
inline std::vector<int> class_quotas(const std::vector<double>& mixture, int n) {
  std::vector<int> counts(mixture.size());
  std::vector<std::pair<double, std::size_t>> rema;
  int assigned = 0;
  for (std::size_t c = 0; c < mixture.size(); ++c) {
    const double exact = mixture[c] * n;
    counts[c] = static_cast<int>(exact);
    assigned += counts[c];
    rema.emplace_back(exact - counts[c], c);
  }
  std::stable_sort(rema.begin(), rema.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[rema[i % rema.size()].second];
  return counts;
}

}  // namespace detail

// Deterministic for a given config: equal seeds give identical corpora.
// No (text_a, text_b) pair appears in more than one split.
inline Corpus generate(const Config& cfg) {
  cfg.validate();
  const World world(cfg.num_classes);
  std::mt19937_64 rng(cfg.seed);
  detail::Sampler sampler(world, cfg, rng);
  std::set<std::pair<std::string, std::string>> seen;
  const auto mixture = cfg.mixture();

  auto make_split = [&](int n) {
    std::vector<int> labels;
    const auto quotas = detail::class_quotas(mixture, n);
    for (std::size_t c = 0; c < quotas.size(); ++c) labels.insert(labels.end(), static_cast<std::size_t>(quotas[c]), static_cast<int>(c));
    std::shuffle(labels.begin(), labels.end(), rng);
    std::vector<SentencePair> out;
    out.reserve(labels.size());
    for (int label : labels) {
      for (int attempt = 0;; ++attempt) {
        auto p = sampler.pair_with_label(label);
        if (seen.emplace(p.text_a, p.text_b).second) {
          out.push_back(std::move(p));
          break;
        }
        if (attempt > 100000) throw Error("synthetic: cannot draw enough distinct pairs");
      }
    }
    return out;
  };

  Corpus corpus;
  corpus.train = make_split(cfg.train_size);
  corpus.dev = make_split(cfg.dev_size);
  corpus.test = make_split(cfg.test_size);
  return corpus;
}

}  // namespace dcmatch::synthetic
