#pragma once

// Small pre-norm transformer pair encoder with hand-written reverse mode.
//
//   x0 = tok[id] + pos[p]
//   x  = x + Dropout(Attn(LN1(x)))        per layer
//   x  = x + Dropout(FF(LN2(x)))
//   H  = LN_f(x),  h_cls = H[0]
//
// Only positions with attn_mask set are gathered, so PAD never enters any
// attention sum. Weights are stored input-major (y = x W + b).

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dcmatch/corpus.hpp"
#include "dcmatch/distribution.hpp"
#include "dcmatch/instrumentation.hpp"

namespace dcmatch {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::RowVectorXd;

struct EncoderConfig {
  int vocab_size = 0;
  int hidden = 64;
  int layers = 2;
  int heads = 4;
  int ff = 128;
  int max_len = 64;
  double dropout = 0.1;
  std::uint64_t seed = 1;

  void validate() const {
    if (vocab_size < Vocab::kNumReserved) throw Error("encoder config: vocab_size must cover the reserved tokens");
    if (hidden < 1 || layers < 1 || heads < 1 || ff < 1 || max_len < 1)
      throw Error("encoder config: all sizes must be >= 1");
    if (hidden % heads != 0) throw Error("encoder config: hidden size must be divisible by heads");
    if (dropout < 0.0 || dropout >= 1.0) throw Error("encoder config: dropout must be in [0,1)");
  }

  json to_json() const {
    return {{"vocab_size", vocab_size}, {"hidden", hidden}, {"layers", layers}, {"heads", heads},
            {"ff", ff}, {"max_len", max_len}, {"dropout", dropout}, {"seed", seed}};
  }

  static EncoderConfig from_json(const json& j) {
    EncoderConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ff = j.at("ff").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  }
};

// Weight decay applies to kWeight tensors only.
enum class ParamKind { kWeight, kBias, kNorm };

struct LayerParams {
  Mat ln1_gain, ln1_bias;
  Mat wq, bq, wk, bk, wv, bv, wo, bo;
  Mat ln2_gain, ln2_bias;
  Mat w1, b1, w2, b2;
};

struct ModelParams {
  EncoderConfig config;
  int num_classes = 2;
  std::uint64_t vocab_hash = 0;

  Mat token_embedding;     // V x H
  Mat position_embedding;  // max_len x H
  std::vector<LayerParams> layers;
  Mat final_gain, final_bias;  // 1 x H
  Mat classifier;              // K x H
  Mat keyword_probe;           // 1 x H

  // Calls f(name, tensor, kind) for every tensor in checkpoint order.
  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  long parameter_count() const {
    long n = 0;
    for_each([&](const std::string&, const Mat& m, ParamKind) { n += static_cast<long>(m.size()); });
    return n;
  }

  ModelParams zeros_like() const {
    ModelParams z = *this;
    z.for_each([](const std::string&, Mat& m, ParamKind) { m.setZero(); });
    return z;
  }

  void set_zero() {
    for_each([](const std::string&, Mat& m, ParamKind) { m.setZero(); });
  }

  // this += scale * other (shapes must agree).
  void add_scaled(const ModelParams& other, double scale) {
    std::vector<const Mat*> src;
    other.for_each([&](const std::string&, const Mat& m, ParamKind) { src.push_back(&m); });
    std::size_t i = 0;
    for_each([&](const std::string&, Mat& m, ParamKind) { m += scale * *src[i++]; });
  }

 private:
  template <class Self, class F>
  static void visit(Self& s, F& f) {
    f(std::string("token_embedding"), s.token_embedding, ParamKind::kWeight);
    f(std::string("position_embedding"), s.position_embedding, ParamKind::kWeight);
    for (std::size_t l = 0; l < s.layers.size(); ++l) {
      auto& L = s.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      f(p + "ln1.gain", L.ln1_gain, ParamKind::kNorm);
      f(p + "ln1.bias", L.ln1_bias, ParamKind::kNorm);
      f(p + "attn.wq", L.wq, ParamKind::kWeight);
      f(p + "attn.bq", L.bq, ParamKind::kBias);
      f(p + "attn.wk", L.wk, ParamKind::kWeight);
      f(p + "attn.bk", L.bk, ParamKind::kBias);
      f(p + "attn.wv", L.wv, ParamKind::kWeight);
      f(p + "attn.bv", L.bv, ParamKind::kBias);
      f(p + "attn.wo", L.wo, ParamKind::kWeight);
      f(p + "attn.bo", L.bo, ParamKind::kBias);
      f(p + "ln2.gain", L.ln2_gain, ParamKind::kNorm);
      f(p + "ln2.bias", L.ln2_bias, ParamKind::kNorm);
      f(p + "ff.w1", L.w1, ParamKind::kWeight);
      f(p + "ff.b1", L.b1, ParamKind::kBias);
      f(p + "ff.w2", L.w2, ParamKind::kWeight);
      f(p + "ff.b2", L.b2, ParamKind::kBias);
    }
    f(std::string("final_ln.gain"), s.final_gain, ParamKind::kNorm);
    f(std::string("final_ln.bias"), s.final_bias, ParamKind::kNorm);
    f(std::string("classifier"), s.classifier, ParamKind::kWeight);
    f(std::string("keyword_probe"), s.keyword_probe, ParamKind::kWeight);
  }
};

// Allocates every tensor with its shape; values are zero.
inline ModelParams shaped_params(const EncoderConfig& cfg, int num_classes) {
  cfg.validate();
  if (num_classes < 2) throw Error("init_params: num_classes must be >= 2");
  const int H = cfg.hidden;
  const int F = cfg.ff;
  ModelParams p;
  p.config = cfg;
  p.num_classes = num_classes;
  p.token_embedding = Mat::Zero(cfg.vocab_size, H);
  p.position_embedding = Mat::Zero(cfg.max_len, H);
  p.layers.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& L : p.layers) {
    L.ln1_gain = Mat::Zero(1, H);
    L.ln1_bias = Mat::Zero(1, H);
    for (Mat* w : {&L.wq, &L.wk, &L.wv, &L.wo}) *w = Mat::Zero(H, H);
    for (Mat* b : {&L.bq, &L.bk, &L.bv, &L.bo}) *b = Mat::Zero(1, H);
    L.ln2_gain = Mat::Zero(1, H);
    L.ln2_bias = Mat::Zero(1, H);
    L.w1 = Mat::Zero(H, F);
    L.b1 = Mat::Zero(1, F);
    L.w2 = Mat::Zero(F, H);
    L.b2 = Mat::Zero(1, H);
  }
  p.final_gain = Mat::Zero(1, H);
  p.final_bias = Mat::Zero(1, H);
  p.classifier = Mat::Zero(num_classes, H);
  p.keyword_probe = Mat::Zero(1, H);
  return p;
}

// Weights ~ N(0, 0.02), layer-norm gain 1, biases 0, PAD embedding row 0.
inline ModelParams init_params(const EncoderConfig& cfg, const LabelScheme& scheme) {
  scheme.validate();
  ModelParams p = shaped_params(cfg, scheme.num_classes);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  p.for_each([&](const std::string&, Mat& m, ParamKind kind) {
    switch (kind) {
      case ParamKind::kWeight:
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
        break;
      case ParamKind::kNorm:
        m.setZero();
        break;
      case ParamKind::kBias:
        m.setZero();
        break;
    }
  });
  for (auto& L : p.layers) {
    L.ln1_gain.setOnes();
    L.ln2_gain.setOnes();
  }
  p.final_gain.setOnes();
  p.token_embedding.row(Vocab::kPad).setZero();
  return p;
}

// ---------------------------------------------------------------------------
// Forward

enum class Mode { kEval, kTrain };

struct EncoderOutput {
  RowVec h_cls;
  Mat states;                  // one row per non-PAD position
  std::vector<int> positions;  // sequence index of each row
};

struct LayerTrace {
  Mat x_in;
  Mat ln1_xhat;
  Eigen::VectorXd ln1_rstd;
  Mat a;  // LN1 output
  Mat q, k, v;
  std::vector<Mat> probs;  // per head attention weights
  Mat ctx;
  Mat attn_drop;  // empty when dropout is off
  Mat x_mid;
  Mat ln2_xhat;
  Eigen::VectorXd ln2_rstd;
  Mat b;  // LN2 output
  Mat ff_pre, ff_act;
  Mat ff_drop;
};

// Everything backward() needs from one forward pass.
struct ForwardTrace {
  std::vector<int> ids;
  std::vector<int> positions;
  std::vector<LayerTrace> layers;
  Mat final_xhat;
  Eigen::VectorXd final_rstd;
};

namespace detail {

constexpr double kLayerNormEps = 1e-5;

inline void layer_norm(const Mat& x, const Mat& gain, const Mat& bias, Mat& y, Mat& xhat, Eigen::VectorXd& rstd) {
  const auto n = x.rows();
  const double cols = static_cast<double>(x.cols());
  xhat.resize(n, x.cols());
  rstd.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = x.row(r).sum() / cols;
    const double var = (x.row(r).array() - mu).square().sum() / cols;
    rstd(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (x.row(r).array() - mu) * rstd(r);
  }
  y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

inline Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Eigen::VectorXd& rstd, const Mat& gain,
                               Mat& d_gain, Mat& d_bias) {
  d_gain += (dy.array() * xhat.array()).colwise().sum().matrix();
  d_bias += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * gain.row(0).array();
  const double cols = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() / cols;
    const double mean_dx = dxhat.row(r).dot(xhat.row(r)) / cols;
    dx.row(r) = rstd(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

inline double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

inline Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  Mat m(rows, cols);
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? scale : 0.0;
  return m;
}

inline void row_softmax(Mat& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp();
    s.row(r) /= s.row(r).sum();
  }
}

}  // namespace detail

// Forward pass. In kTrain mode with a positive dropout rate `rng` must be set.
// `trace`, when given, records what backward() needs.
inline EncoderOutput encode(const ModelParams& params, const EncodedPair& enc, Mode mode = Mode::kEval,
                            std::mt19937_64* rng = nullptr, ForwardTrace* trace = nullptr) {
  instrumentation::counters().encoder_forwards.fetch_add(1, std::memory_order_relaxed);
  const auto& cfg = params.config;
  if (enc.length() > cfg.max_len)
    throw Error("encode: sequence length " + std::to_string(enc.length()) + " exceeds max_len " + std::to_string(cfg.max_len));

  std::vector<int> ids;
  std::vector<int> positions;
  for (int i = 0; i < enc.length(); ++i) {
    if (!enc.attn_mask[static_cast<std::size_t>(i)]) continue;
    const int id = enc.ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= cfg.vocab_size) throw Error("encode: token id " + std::to_string(id) + " out of range");
    ids.push_back(id);
    positions.push_back(i);
  }
  if (ids.empty()) throw Error("encode: sequence has no unmasked positions");

  const bool drop = mode == Mode::kTrain && cfg.dropout > 0.0;
  if (drop && rng == nullptr) throw Error("encode: training-mode dropout needs an rng");

  const auto T = static_cast<Eigen::Index>(ids.size());
  const int H = cfg.hidden;
  const int heads = cfg.heads;
  const int d = H / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Mat x(T, H);
  for (Eigen::Index t = 0; t < T; ++t)
    x.row(t) = params.token_embedding.row(ids[static_cast<std::size_t>(t)]) +
               params.position_embedding.row(positions[static_cast<std::size_t>(t)]);

  if (trace) {
    trace->ids = ids;
    trace->positions = positions;
    trace->layers.assign(params.layers.size(), {});
  }

  LayerTrace scratch;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& L = params.layers[l];
    LayerTrace& lt = trace ? trace->layers[l] : scratch;
    lt.x_in = x;
    detail::layer_norm(x, L.ln1_gain, L.ln1_bias, lt.a, lt.ln1_xhat, lt.ln1_rstd);
    lt.q = (lt.a * L.wq).rowwise() + L.bq.row(0);
    lt.k = (lt.a * L.wk).rowwise() + L.bk.row(0);
    lt.v = (lt.a * L.wv).rowwise() + L.bv.row(0);
    lt.ctx.resize(T, H);
    lt.probs.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Mat s = lt.q.middleCols(h * d, d) * lt.k.middleCols(h * d, d).transpose() * scale;
      detail::row_softmax(s);
      lt.ctx.middleCols(h * d, d) = s * lt.v.middleCols(h * d, d);
      lt.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    Mat o = (lt.ctx * L.wo).rowwise() + L.bo.row(0);
    if (drop) {
      lt.attn_drop = detail::dropout_mask(T, H, cfg.dropout, *rng);
      o.array() *= lt.attn_drop.array();
    } else {
      lt.attn_drop.resize(0, 0);
    }
    lt.x_mid = x + o;

    detail::layer_norm(lt.x_mid, L.ln2_gain, L.ln2_bias, lt.b, lt.ln2_xhat, lt.ln2_rstd);
    lt.ff_pre = (lt.b * L.w1).rowwise() + L.b1.row(0);
    lt.ff_act = lt.ff_pre.unaryExpr([](double v) { return detail::gelu(v); });
    Mat f = (lt.ff_act * L.w2).rowwise() + L.b2.row(0);
    if (drop) {
      lt.ff_drop = detail::dropout_mask(T, H, cfg.dropout, *rng);
      f.array() *= lt.ff_drop.array();
    } else {
      lt.ff_drop.resize(0, 0);
    }
    x = lt.x_mid + f;
  }

  EncoderOutput out;
  Mat xhat;
  Eigen::VectorXd rstd;
  detail::layer_norm(x, params.final_gain, params.final_bias, out.states, xhat, rstd);
  if (trace) {
    trace->final_xhat = std::move(xhat);
    trace->final_rstd = std::move(rstd);
  }
  out.h_cls = out.states.row(0);
  out.positions = std::move(positions);
  return out;
}

// Accumulates into `grads` the parameter gradients given dL/dstates
// (row 0 carries the h_cls gradient).
inline void backward(const ModelParams& params, const ForwardTrace& trace, const Mat& d_states, ModelParams& grads) {
  const auto& cfg = params.config;
  const int H = cfg.hidden;
  const int heads = cfg.heads;
  const int d = H / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Mat dx = detail::layer_norm_backward(d_states, trace.final_xhat, trace.final_rstd, params.final_gain,
                                       grads.final_gain, grads.final_bias);

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& L = params.layers[li];
    auto& G = grads.layers[li];
    const auto& lt = trace.layers[li];

    // feed-forward branch
    Mat df = dx;
    if (lt.ff_drop.size() != 0) df.array() *= lt.ff_drop.array();
    G.w2.noalias() += lt.ff_act.transpose() * df;
    G.b2 += df.colwise().sum();
    Mat d_pre = df * L.w2.transpose();
    d_pre.array() *= lt.ff_pre.unaryExpr([](double v) { return detail::gelu_grad(v); }).array();
    G.w1.noalias() += lt.b.transpose() * d_pre;
    G.b1 += d_pre.colwise().sum();
    const Mat db = d_pre * L.w1.transpose();
    dx += detail::layer_norm_backward(db, lt.ln2_xhat, lt.ln2_rstd, L.ln2_gain, G.ln2_gain, G.ln2_bias);

    // attention branch
    Mat d_o = dx;
    if (lt.attn_drop.size() != 0) d_o.array() *= lt.attn_drop.array();
    G.wo.noalias() += lt.ctx.transpose() * d_o;
    G.bo += d_o.colwise().sum();
    const Mat d_ctx = d_o * L.wo.transpose();
    Mat dq(d_ctx.rows(), H), dk(d_ctx.rows(), H), dv(d_ctx.rows(), H);
    for (int h = 0; h < heads; ++h) {
      const Mat& A = lt.probs[static_cast<std::size_t>(h)];
      const auto dch = d_ctx.middleCols(h * d, d);
      const Mat dA = dch * lt.v.middleCols(h * d, d).transpose();
      dv.middleCols(h * d, d) = A.transpose() * dch;
      Mat dS = A.array() * (dA.array().colwise() - (dA.array() * A.array()).rowwise().sum());
      dS *= scale;
      dq.middleCols(h * d, d) = dS * lt.k.middleCols(h * d, d);
      dk.middleCols(h * d, d) = dS.transpose() * lt.q.middleCols(h * d, d);
    }
    G.wq.noalias() += lt.a.transpose() * dq;
    G.wk.noalias() += lt.a.transpose() * dk;
    G.wv.noalias() += lt.a.transpose() * dv;
    G.bq += dq.colwise().sum();
    G.bk += dk.colwise().sum();
    G.bv += dv.colwise().sum();
    const Mat da = dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
    dx += detail::layer_norm_backward(da, lt.ln1_xhat, lt.ln1_rstd, L.ln1_gain, G.ln1_gain, G.ln1_bias);
  }

  for (std::size_t t = 0; t < trace.ids.size(); ++t) {
    grads.token_embedding.row(trace.ids[t]) += dx.row(static_cast<Eigen::Index>(t));
    grads.position_embedding.row(trace.positions[t]) += dx.row(static_cast<Eigen::Index>(t));
  }
}

// ---------------------------------------------------------------------------
// Heads

inline std::vector<double> logits(const RowVec& h_cls, const Mat& classifier) {
  if (h_cls.size() != classifier.cols()) throw Error("classify: hidden size mismatch");
  std::vector<double> z(static_cast<std::size_t>(classifier.rows()));
  for (Eigen::Index k = 0; k < classifier.rows(); ++k) z[static_cast<std::size_t>(k)] = classifier.row(k).dot(h_cls);
  return z;
}

// softmax(h_cls W^T)
inline MatchDistribution classify(const RowVec& h_cls, const Mat& classifier) {
  if (!h_cls.allFinite()) throw Error("classify: non-finite representation");
  return MatchDistribution::from_logits(logits(h_cls, classifier));
}

// Gradient of the classification head given dL/dlogits: accumulates dW and
// returns dL/dh_cls.
inline RowVec classify_backward(const RowVec& h_cls, const Mat& classifier, std::span<const double> d_logits,
                                Mat& d_classifier) {
  RowVec dh = RowVec::Zero(h_cls.size());
  for (Eigen::Index k = 0; k < classifier.rows(); ++k) {
    const double g = d_logits[static_cast<std::size_t>(k)];
    d_classifier.row(k) += g * h_cls;
    dh += g * classifier.row(k);
  }
  return dh;
}

struct GroupPool {
  RowVec keyword;  // mean of KEYWORD rows (zero when empty)
  RowVec intent;   // mean of INTENT rows (zero when empty)
  int keyword_count = 0;
  int intent_count = 0;

  // Both groups populated; otherwise the keyword/intent loss is skipped.
  bool complete() const { return keyword_count > 0 && intent_count > 0; }
};

// Average pooling of states by group; SPECIAL and PAD rows are excluded.
inline GroupPool group_pool(const Mat& states, std::span<const GroupTag> row_tags) {
  if (static_cast<Eigen::Index>(row_tags.size()) != states.rows()) throw Error("group_pool: tag count mismatch");
  GroupPool g;
  g.keyword = RowVec::Zero(states.cols());
  g.intent = RowVec::Zero(states.cols());
  for (Eigen::Index r = 0; r < states.rows(); ++r) {
    switch (row_tags[static_cast<std::size_t>(r)]) {
      case GroupTag::kKeyword:
        g.keyword += states.row(r);
        ++g.keyword_count;
        break;
      case GroupTag::kIntent:
        g.intent += states.row(r);
        ++g.intent_count;
        break;
      default:
        break;
    }
  }
  if (g.keyword_count > 0) g.keyword /= g.keyword_count;
  if (g.intent_count > 0) g.intent /= g.intent_count;
  return g;
}

// Tags of the rows of an EncoderOutput.
inline std::vector<GroupTag> row_tags(const EncoderOutput& out, const EncodedPair& enc) {
  std::vector<GroupTag> tags;
  tags.reserve(out.positions.size());
  for (int p : out.positions) tags.push_back(enc.tags[static_cast<std::size_t>(p)]);
  return tags;
}

inline GroupPool group_pool(const EncoderOutput& out, const EncodedPair& enc) {
  const auto tags = row_tags(out, enc);
  return group_pool(out.states, tags);
}

}  // namespace dcmatch
