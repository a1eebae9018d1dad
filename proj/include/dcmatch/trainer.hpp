#pragma once

// Training loop for the baseline and divide-and-conquer regimes, AdamW,
// inference, evaluation and P-vs-Q consistency analysis.

#include <algorithm>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dcmatch/dc_losses.hpp"
#include "dcmatch/distant_labeler.hpp"
#include "dcmatch/encoder.hpp"
#include "dcmatch/metrics.hpp"

namespace dcmatch {

enum class TrainMode { kBaseline, kDcMatch };

inline const char* to_string(TrainMode m) { return m == TrainMode::kBaseline ? "baseline" : "dc_match"; }

inline TrainMode parse_train_mode(std::string_view s) {
  if (s == "baseline") return TrainMode::kBaseline;
  if (s == "dc_match") return TrainMode::kDcMatch;
  throw Error("unknown mode '" + std::string(s) + "' (expected baseline or dc_match)");
}

// ---------------------------------------------------------------------------
// AdamW

struct AdamWConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

// One decoupled-weight-decay Adam update on a flat tensor. `step` counts from 1.
//   w <- w (1 - lr wd)                                     (if decay)
//   m <- b1 m + (1-b1) g,   v <- b2 v + (1-b2) g^2
//   w <- w - lr m_hat / (sqrt(v_hat) + eps)
inline void adamw_update(std::span<double> w, std::span<const double> g, std::span<double> m, std::span<double> v,
                         long step, const AdamWConfig& c, bool decay) {
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  const double shrink = decay ? 1.0 - c.learning_rate * c.weight_decay : 1.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    w[i] = w[i] * shrink - c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
}

struct AdamState {
  ModelParams m;
  ModelParams v;
  long step = 0;

  static AdamState zeros_for(const ModelParams& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
};

inline void adamw_step(ModelParams& params, const ModelParams& grads, AdamState& state, const AdamWConfig& cfg) {
  std::vector<const Mat*> gs;
  grads.for_each([&](const std::string& name, const Mat& g, ParamKind) {
    if (!g.allFinite()) throw Error("adamw_step: non-finite gradient in " + name);
    gs.push_back(&g);
  });
  std::vector<Mat*> ms, vs;
  state.m.for_each([&](const std::string&, Mat& m, ParamKind) { ms.push_back(&m); });
  state.v.for_each([&](const std::string&, Mat& v, ParamKind) { vs.push_back(&v); });
  ++state.step;
  std::size_t i = 0;
  params.for_each([&](const std::string& name, Mat& w, ParamKind kind) {
    if (gs[i]->size() != w.size()) throw Error("adamw_step: shape mismatch in " + name);
    const auto n = static_cast<std::size_t>(w.size());
    adamw_update({w.data(), n}, {gs[i]->data(), n}, {ms[i]->data(), n}, {vs[i]->data(), n}, state.step, cfg,
                 kind == ParamKind::kWeight);
    ++i;
  });
}

// ---------------------------------------------------------------------------
// Per-example objective

struct ExampleTerms {
  LossBreakdown loss;
  MatchDistribution p;
  std::optional<MatchDistribution> p_keyword;
  std::optional<MatchDistribution> p_intent;
  std::optional<MatchDistribution> q;
};

namespace detail {

// Scatters dL/dh_cls and the pooled-group gradients into a per-row state gradient.
inline Mat state_gradient(const EncoderOutput& out, const RowVec& d_cls) {
  Mat d = Mat::Zero(out.states.rows(), out.states.cols());
  d.row(0) += d_cls;
  return d;
}

}  // namespace detail

// Loss of one encoded pair and, when `grads` is set, accumulates
// `scale * dLoss/dparams` into it. Baseline mode evaluates L_sm only; the
// divide-and-conquer mode adds the keyword/intent loss and the consistency
// loss against the masked sub-problems.
inline ExampleTerms example_objective(const ModelParams& params, const EncodedPair& enc, TrainMode train_mode,
                                      const LossWeights& w, Mode mode, std::mt19937_64* rng, ModelParams* grads,
                                      double scale = 1.0) {
  ForwardTrace full_trace;
  const auto full = encode(params, enc, mode, rng, grads ? &full_trace : nullptr);
  const auto p = classify(full.h_cls, params.classifier);
  const double l_sm = loss_sm(p, enc.label);

  if (train_mode == TrainMode::kBaseline) {
    ExampleTerms terms{total_loss(l_sm, std::nullopt, 0.0, {w.sm, 0.0, 0.0}), p, {}, {}, {}};
    if (grads) {
      auto d_p = loss_sm_grad(p, enc.label);
      for (auto& x : d_p) x *= w.sm * scale;
      const auto d_logits = softmax_backward(p, d_p);
      const RowVec d_cls = classify_backward(full.h_cls, params.classifier, d_logits, grads->classifier);
      backward(params, full_trace, detail::state_gradient(full, d_cls), *grads);
    }
    return terms;
  }

  const auto enc_k = mask_subproblem(enc, KeepGroup::kKeyword);
  const auto enc_i = mask_subproblem(enc, KeepGroup::kIntent);
  ForwardTrace trace_k, trace_i;
  const auto out_k = encode(params, enc_k, mode, rng, grads ? &trace_k : nullptr);
  const auto out_i = encode(params, enc_i, mode, rng, grads ? &trace_i : nullptr);
  const auto p_k = classify(out_k.h_cls, params.classifier);
  const auto p_i = classify(out_i.h_cls, params.classifier);
  const auto q = combine_q(p_k, p_i);
  const double l_dc = loss_dc(p, q);

  const auto tags = row_tags(full, enc);
  const auto pool = group_pool(full.states, tags);
  const RowVec probe = params.keyword_probe.row(0);
  std::optional<double> l_ds;
  if (pool.complete()) l_ds = loss_ds(pool.keyword, pool.intent, probe);

  ExampleTerms terms{total_loss(l_sm, l_ds, l_dc, w), p, p_k, p_i, q};
  if (!grads) return terms;

  // global branch: L_sm and the P side of L_dc
  const auto dc = loss_dc_grad(p, q);
  const auto sm = loss_sm_grad(p, enc.label);
  std::vector<double> d_p(p.num_classes());
  for (std::size_t c = 0; c < d_p.size(); ++c) d_p[c] = scale * (w.sm * sm[c] + w.dc * dc.d_p[c]);
  const RowVec d_cls = classify_backward(full.h_cls, params.classifier, softmax_backward(p, d_p), grads->classifier);
  Mat d_states = detail::state_gradient(full, d_cls);
  if (l_ds && w.ds != 0.0) {
    const auto g = loss_ds_grad(pool.keyword, pool.intent, probe);
    grads->keyword_probe.row(0) += scale * w.ds * g.d_probe;
    for (Eigen::Index r = 0; r < d_states.rows(); ++r) {
      if (tags[static_cast<std::size_t>(r)] == GroupTag::kKeyword)
        d_states.row(r) += (scale * w.ds / pool.keyword_count) * g.d_keyword;
      else if (tags[static_cast<std::size_t>(r)] == GroupTag::kIntent)
        d_states.row(r) += (scale * w.ds / pool.intent_count) * g.d_intent;
    }
  }
  backward(params, full_trace, d_states, *grads);

  // sub-problem branches: the Q side of L_dc
  std::vector<double> d_q(dc.d_q);
  for (auto& x : d_q) x *= scale * w.dc;
  const auto split = combine_q_grad(p_k, p_i, d_q);
  const RowVec d_cls_k = classify_backward(out_k.h_cls, params.classifier, softmax_backward(p_k, split.d_keyword), grads->classifier);
  backward(params, trace_k, detail::state_gradient(out_k, d_cls_k), *grads);
  const RowVec d_cls_i = classify_backward(out_i.h_cls, params.classifier, softmax_backward(p_i, split.d_intent), grads->classifier);
  backward(params, trace_i, detail::state_gradient(out_i, d_cls_i), *grads);
  return terms;
}

// ---------------------------------------------------------------------------
// Inference

struct Prediction {
  int label = 0;
  MatchDistribution probs;
};

inline void require_vocab_match(const ModelParams& params, const Vocab& vocab) {
  if (params.vocab_hash != vocab.hash()) throw Error("checkpoint/vocab mismatch: vocabulary hash differs");
  if (params.config.vocab_size != vocab.size()) throw Error("checkpoint/vocab mismatch: vocabulary size differs");
}

namespace detail {

inline Prediction predict_unchecked(const ModelParams& params, const Vocab& vocab, std::string_view text_a,
                                    std::string_view text_b) {
  const auto enc = encode_text_pair(text_a, text_b, vocab, params.config.max_len);
  const auto out = encode(params, enc, Mode::kEval);
  auto probs = classify(out.h_cls, params.classifier);
  const int label = probs.argmax();
  return {label, std::move(probs)};
}

}  // namespace detail

// argmax_y P(y | a, b) from one encoder forward over the raw pair. Keyword
// annotations are never consulted.
inline Prediction predict(const ModelParams& params, const Vocab& vocab, std::string_view text_a, std::string_view text_b) {
  require_vocab_match(params, vocab);
  return detail::predict_unchecked(params, vocab, text_a, text_b);
}

inline EvalReport evaluate(const ModelParams& params, const Vocab& vocab, std::span<const SentencePair> data) {
  if (data.empty()) throw Error("evaluate: empty dataset");
  require_vocab_match(params, vocab);
  std::vector<int> gold, pred;
  gold.reserve(data.size());
  pred.reserve(data.size());
  for (const auto& pair : data) {
    gold.push_back(pair.label);
    pred.push_back(detail::predict_unchecked(params, vocab, pair.text_a, pair.text_b).label);
  }
  return report_from_predictions(gold, pred, params.num_classes);
}

// ---------------------------------------------------------------------------
// Consistency analysis

struct ExampleConsistency {
  int label = 0;
  MatchDistribution p, p_keyword, p_intent, q;
  double score = 0.0;  // symmetric KL between P and Q
};

struct ConsistencyReport {
  std::vector<ExampleConsistency> examples;  // dataset order
  std::vector<double> scores;                // dataset order
  std::vector<double> sorted_scores;
  double mean = 0.0;
  double median = 0.0;

  json to_json() const {
    return {{"n_examples", scores.size()}, {"mean", mean}, {"median", median}, {"scores", scores},
            {"sorted_scores", sorted_scores}};
  }
};

inline ConsistencyReport analyze_consistency(const ModelParams& params, const Vocab& vocab,
                                             std::span<const SentencePair> data) {
  require_vocab_match(params, vocab);
  if (data.empty()) throw Error("analyze_consistency: empty dataset");
  ConsistencyReport r;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data[i].has_keywords()) throw Error("analyze_consistency: record " + std::to_string(i) + " has no keyword tags");
    const auto enc = encode_pair(data[i], vocab, params.config.max_len);
    auto t = example_objective(params, enc, TrainMode::kDcMatch, {}, Mode::kEval, nullptr, nullptr);
    const double score = loss_dc(t.p, *t.q);
    r.scores.push_back(score);
    r.examples.push_back({data[i].label, t.p, *t.p_keyword, *t.p_intent, *t.q, score});
  }
  r.sorted_scores = r.scores;
  std::sort(r.sorted_scores.begin(), r.sorted_scores.end());
  r.mean = std::accumulate(r.scores.begin(), r.scores.end(), 0.0) / static_cast<double>(r.scores.size());
  const std::size_t n = r.sorted_scores.size();
  r.median = n % 2 ? r.sorted_scores[n / 2] : 0.5 * (r.sorted_scores[n / 2 - 1] + r.sorted_scores[n / 2]);
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoint selection

// Keeps the k entries with the highest metric; on ties the earlier entry stays.
template <class Payload>
class TopK {
 public:
  struct Entry {
    long step;
    double metric;
    Payload payload;
  };

  explicit TopK(std::size_t k) : k_(k) {}

  // Returns true if the entry was retained.
  bool offer(long step, double metric, Payload payload) {
    if (k_ == 0) return false;
    if (entries_.size() == k_ && !(metric > entries_.back().metric)) return false;
    auto pos = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return metric > e.metric; });
    entries_.insert(pos, Entry{step, metric, std::move(payload)});
    if (entries_.size() > k_) entries_.pop_back();
    return true;
  }

  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::size_t k_;
  std::vector<Entry> entries_;  // metric descending
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  AdamWConfig optimizer;
  int batch_size = 64;
  long max_steps = 2000;
  long eval_interval = 200;
  int top_k = 3;
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::kDcMatch;
  LossWeights weights;
  int threads = 1;

  void validate() const {
    std::vector<std::string> problems;
    if (!(optimizer.learning_rate > 0)) problems.push_back("learning_rate must be > 0");
    if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1)) problems.push_back("beta1 must be in [0,1)");
    if (!(optimizer.beta2 >= 0 && optimizer.beta2 < 1)) problems.push_back("beta2 must be in [0,1)");
    if (!(optimizer.epsilon > 0)) problems.push_back("epsilon must be > 0");
    if (!(optimizer.weight_decay >= 0)) problems.push_back("weight_decay must be >= 0");
    if (batch_size < 1) problems.push_back("batch_size must be >= 1");
    if (max_steps < 1) problems.push_back("max_steps must be >= 1");
    if (eval_interval < 1) problems.push_back("eval_interval must be >= 1");
    if (top_k < 1) problems.push_back("top_k must be >= 1");
    if (threads < 1) problems.push_back("threads must be >= 1");
    if (!problems.empty()) {
      std::string msg = "invalid training config:";
      for (const auto& p : problems) msg += "\n  - " + p;
      throw Error(msg);
    }
  }
};

struct TrainLogEntry {
  long step = 0;
  double l_sm = 0.0;
  std::optional<double> l_ds;
  std::optional<double> l_dc;
  double dev_accuracy = 0.0;
  double dev_macro_f1 = 0.0;

  json to_json() const {
    json j = {{"step", step}, {"l_sm", l_sm}};
    if (l_ds) j["l_ds"] = *l_ds;
    if (l_dc) j["l_dc"] = *l_dc;
    j["dev_accuracy"] = dev_accuracy;
    j["dev_macro_f1"] = dev_macro_f1;
    return j;
  }
};

struct RetainedCheckpoint {
  long step = 0;
  EvalReport dev;
  std::optional<EvalReport> test;
};

struct TrainResult {
  ModelParams best;                        // highest dev accuracy
  std::vector<TrainLogEntry> log;          // one per evaluation point
  std::vector<double> step_losses;         // batch-mean total per step
  std::vector<RetainedCheckpoint> top;     // best first
  std::optional<double> mean_test_accuracy;
  std::optional<double> mean_test_macro_f1;
};

struct TrainData {
  std::span<const SentencePair> train;
  std::span<const SentencePair> dev;
  std::span<const SentencePair> test;  // may be empty
};

// Optional overrides, mainly for tests: replace dev/test evaluation or observe log entries.
struct TrainHooks {
  std::function<EvalReport(const ModelParams&, long step)> dev_eval;
  std::function<EvalReport(const ModelParams&, long step)> test_eval;
  std::function<void(const TrainLogEntry&)> on_eval;
};

namespace detail {

inline std::mt19937_64 example_rng(std::uint64_t seed, long step, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

}  // namespace detail

// Mini-batch training from `init`. Evaluates on dev every eval_interval
// steps (and at the last step), keeps the top_k checkpoints by dev accuracy,
// and reports the mean test metrics of those checkpoints.
inline TrainResult train(const TrainConfig& cfg, const ModelParams& init, const Vocab& vocab, const TrainData& data,
                         const TrainHooks& hooks = {}) {
  cfg.validate();
  if (data.train.empty()) throw Error("train: empty training set");
  if (data.dev.empty() && !hooks.dev_eval) throw Error("train: empty dev set");
  if (cfg.mode == TrainMode::kDcMatch) {
    for (std::size_t i = 0; i < data.train.size(); ++i)
      if (!data.train[i].has_keywords())
        throw Error("train: dc_match mode needs keyword tags on every training pair (record " + std::to_string(i) + " has none)");
  }
  require_vocab_match(init, vocab);

  std::vector<EncodedPair> encoded;
  encoded.reserve(data.train.size());
  for (const auto& p : data.train) encoded.push_back(encode_pair(p, vocab, init.config.max_len));

  ModelParams params = init;
  AdamState adam = AdamState::zeros_for(params);
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::vector<std::size_t> order(encoded.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  std::size_t cursor = 0;

  const int n_threads = std::max(1, cfg.threads);
  std::vector<ModelParams> thread_grads(static_cast<std::size_t>(n_threads), params.zeros_like());
  ModelParams grads = params.zeros_like();

  TrainResult result;
  struct Snapshot {
    ModelParams params;
    EvalReport dev;
  };
  TopK<Snapshot> top(static_cast<std::size_t>(cfg.top_k));
  std::vector<LossBreakdown> window;  // batch means since the last evaluation

  auto dev_eval = [&](const ModelParams& p, long step) {
    return hooks.dev_eval ? hooks.dev_eval(p, step) : evaluate(p, vocab, data.dev);
  };

  for (long step = 1; step <= cfg.max_steps; ++step) {
    std::vector<std::size_t> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    const double scale = 1.0 / static_cast<double>(batch.size());
    std::vector<LossBreakdown> losses(batch.size());

    auto work = [&](int t) {
      ModelParams& g = thread_grads[static_cast<std::size_t>(t)];
      g.set_zero();
      for (std::size_t j = static_cast<std::size_t>(t); j < batch.size(); j += static_cast<std::size_t>(n_threads)) {
        auto rng = detail::example_rng(cfg.seed, step, j);
        losses[j] = example_objective(params, encoded[batch[j]], cfg.mode, cfg.weights, Mode::kTrain, &rng, &g, scale).loss;
      }
    };
    if (n_threads == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < n_threads; ++t) pool.emplace_back(work, t);
      for (auto& th : pool) th.join();
    }
    grads.set_zero();
    for (const auto& g : thread_grads) grads.add_scaled(g, 1.0);  // fixed order
    adamw_step(params, grads, adam, cfg.optimizer);

    const auto mean = batch_mean(losses);
    result.step_losses.push_back(mean.total);
    window.push_back(mean);

    if (step % cfg.eval_interval == 0 || step == cfg.max_steps) {
      TrainLogEntry entry;
      entry.step = step;
      double ds_sum = 0.0, dc_sum = 0.0;
      bool any_ds = false;
      for (const auto& m : window) {
        entry.l_sm += m.l_sm / static_cast<double>(window.size());
        dc_sum += m.l_dc / static_cast<double>(window.size());
        if (m.l_ds) {
          ds_sum += *m.l_ds / static_cast<double>(window.size());
          any_ds = true;
        }
      }
      window.clear();
      if (cfg.mode == TrainMode::kDcMatch) {
        entry.l_dc = dc_sum;
        if (any_ds) entry.l_ds = ds_sum;
      }
      const auto dev = dev_eval(params, step);
      entry.dev_accuracy = dev.accuracy;
      entry.dev_macro_f1 = dev.macro_f1;
      result.log.push_back(entry);
      if (hooks.on_eval) hooks.on_eval(entry);
      top.offer(step, dev.accuracy, {params, dev});
    }
  }

  // Final selection: evaluate the retained checkpoints on test.
  double acc_sum = 0.0, f1_sum = 0.0;
  bool have_test = !data.test.empty() || static_cast<bool>(hooks.test_eval);
  for (const auto& e : top.entries()) {
    RetainedCheckpoint rc;
    rc.step = e.step;
    rc.dev = e.payload.dev;
    if (have_test) {
      rc.test = hooks.test_eval ? hooks.test_eval(e.payload.params, e.step) : evaluate(e.payload.params, vocab, data.test);
      acc_sum += rc.test->accuracy;
      f1_sum += rc.test->macro_f1;
    }
    result.top.push_back(std::move(rc));
  }
  if (have_test && !top.entries().empty()) {
    result.mean_test_accuracy = acc_sum / static_cast<double>(top.entries().size());
    result.mean_test_macro_f1 = f1_sum / static_cast<double>(top.entries().size());
  }
  result.best = top.entries().empty() ? params : top.entries().front().payload.params;
  return result;
}

}  // namespace dcmatch
