#pragma once

// Divide-and-conquer matching objectives.
//
//   L_sm = -ln P(y)
//   L_ds = -[ln s(h_k . w) + ln s(-h_i . w)]
//   Q(c) = Pr[min(y_k, y_i) = c],  y_k ~ P_k, y_i ~ P_i independent
//   L_dc = 1/2 (KL(P||Q) + KL(Q||P))
//   L    = L_sm + L_ds + L_dc
//
// Each value function has a matching *_grad returning the partial
// derivatives used by the trainer's reverse pass.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "dcmatch/distribution.hpp"
#include "dcmatch/encoder.hpp"

namespace dcmatch {

// Probability floor applied before every logarithm.
inline constexpr double kProbEpsilon = 1e-12;

namespace detail {

inline double clamped_log(double p) { return std::log(std::max(p, kProbEpsilon)); }

// d/dp ln(max(p, eps))
inline double clamped_log_grad(double p) { return p > kProbEpsilon ? 1.0 / p : 0.0; }

inline void require_same_k(const MatchDistribution& a, const MatchDistribution& b, const char* op) {
  if (a.num_classes() != b.num_classes())
    throw Error(std::string(op) + ": distributions have different class counts");
}

// ln s(x) without overflow.
inline double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// L_sm

inline double loss_sm(const MatchDistribution& p, int label) {
  if (label < 0 || label >= static_cast<int>(p.num_classes())) throw Error("loss_sm: label out of range");
  return -detail::clamped_log(p[static_cast<std::size_t>(label)]);
}

// dL_sm/dP
inline std::vector<double> loss_sm_grad(const MatchDistribution& p, int label) {
  if (label < 0 || label >= static_cast<int>(p.num_classes())) throw Error("loss_sm: label out of range");
  std::vector<double> g(p.num_classes(), 0.0);
  g[static_cast<std::size_t>(label)] = -detail::clamped_log_grad(p[static_cast<std::size_t>(label)]);
  return g;
}

// ---------------------------------------------------------------------------
// L_ds

inline double loss_ds_from_scores(double keyword_score, double intent_score) {
  if (!std::isfinite(keyword_score) || !std::isfinite(intent_score)) throw Error("loss_ds: non-finite input");
  return -(detail::log_sigmoid(keyword_score) + detail::log_sigmoid(-intent_score));
}

inline double loss_ds(const RowVec& h_keyword, const RowVec& h_intent, const RowVec& probe) {
  if (h_keyword.size() != probe.size() || h_intent.size() != probe.size()) throw Error("loss_ds: shape mismatch");
  if (!h_keyword.allFinite() || !h_intent.allFinite() || !probe.allFinite()) throw Error("loss_ds: non-finite input");
  return loss_ds_from_scores(h_keyword.dot(probe), h_intent.dot(probe));
}

struct LossDsGrad {
  RowVec d_keyword;
  RowVec d_intent;
  RowVec d_probe;
};

inline LossDsGrad loss_ds_grad(const RowVec& h_keyword, const RowVec& h_intent, const RowVec& probe) {
  const double sk = h_keyword.dot(probe);
  const double si = h_intent.dot(probe);
  const double gk = -detail::sigmoid(-sk);  // dL/dsk
  const double gi = detail::sigmoid(si);    // dL/dsi
  return {gk * probe, gi * probe, gk * h_keyword + gi * h_intent};
}

// ---------------------------------------------------------------------------
// Combination of sub-problem solutions

// Q(c) = P_k(c) P_i(c) + sum_{m>c} P_k(c) P_i(m) + sum_{m>c} P_k(m) P_i(c),
// computed through tail sums as S_k(c) S_i(c) - S_k(c+1) S_i(c+1).
inline MatchDistribution combine_q(const MatchDistribution& pk, const MatchDistribution& pi) {
  detail::require_same_k(pk, pi, "combine_q");
  const std::size_t K = pk.num_classes();
  std::vector<double> tail_k(K + 1, 0.0), tail_i(K + 1, 0.0);
  for (std::size_t c = K; c-- > 0;) {
    tail_k[c] = tail_k[c + 1] + pk[c];
    tail_i[c] = tail_i[c + 1] + pi[c];
  }
  std::vector<double> q(K);
  for (std::size_t c = 0; c < K; ++c) q[c] = pk[c] * tail_i[c + 1] + pi[c] * tail_k[c + 1] + pk[c] * pi[c];
  return MatchDistribution(std::move(q));
}

struct CombineGrad {
  std::vector<double> d_keyword;
  std::vector<double> d_intent;
};

// Given dL/dQ: dQ(c)/dP_k(a) = sum_b P_i(b) [min(a,b) = c], and symmetrically.
inline CombineGrad combine_q_grad(const MatchDistribution& pk, const MatchDistribution& pi, std::span<const double> d_q) {
  detail::require_same_k(pk, pi, "combine_q");
  const std::size_t K = pk.num_classes();
  CombineGrad g{std::vector<double>(K, 0.0), std::vector<double>(K, 0.0)};
  for (std::size_t a = 0; a < K; ++a) {
    for (std::size_t b = 0; b < K; ++b) {
      const double up = d_q[std::min(a, b)];
      g.d_keyword[a] += pi[b] * up;
      g.d_intent[b] += pk[a] * up;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// L_dc

inline double kl_divergence(const MatchDistribution& p, const MatchDistribution& q) {
  detail::require_same_k(p, q, "kl_divergence");
  double kl = 0.0;
  for (std::size_t c = 0; c < p.num_classes(); ++c)
    kl += std::max(p[c], kProbEpsilon) * (detail::clamped_log(p[c]) - detail::clamped_log(q[c]));
  return kl;
}

// Symmetric form 1/2 sum (p - q)(ln p - ln q); never negative.
inline double loss_dc(const MatchDistribution& p, const MatchDistribution& q) {
  detail::require_same_k(p, q, "loss_dc");
  double s = 0.0;
  for (std::size_t c = 0; c < p.num_classes(); ++c)
    s += (std::max(p[c], kProbEpsilon) - std::max(q[c], kProbEpsilon)) *
         (detail::clamped_log(p[c]) - detail::clamped_log(q[c]));
  return 0.5 * s;
}

struct LossDcGrad {
  std::vector<double> d_p;
  std::vector<double> d_q;
};

inline LossDcGrad loss_dc_grad(const MatchDistribution& p, const MatchDistribution& q) {
  detail::require_same_k(p, q, "loss_dc");
  const std::size_t K = p.num_classes();
  LossDcGrad g{std::vector<double>(K), std::vector<double>(K)};
  for (std::size_t c = 0; c < K; ++c) {
    const double pc = std::max(p[c], kProbEpsilon);
    const double qc = std::max(q[c], kProbEpsilon);
    const double log_ratio = detail::clamped_log(p[c]) - detail::clamped_log(q[c]);
    const double dp_clamp = p[c] > kProbEpsilon ? 1.0 : 0.0;
    const double dq_clamp = q[c] > kProbEpsilon ? 1.0 : 0.0;
    g.d_p[c] = 0.5 * (dp_clamp * log_ratio + (pc - qc) * detail::clamped_log_grad(p[c]));
    g.d_q[c] = 0.5 * (-dq_clamp * log_ratio - (pc - qc) * detail::clamped_log_grad(q[c]));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Totals

// Experimental weights; the method itself uses 1, 1, 1.
struct LossWeights {
  double sm = 1.0;
  double ds = 1.0;
  double dc = 1.0;
};

struct LossBreakdown {
  double l_sm = 0.0;
  std::optional<double> l_ds;  // absent when the example has an empty group
  double l_dc = 0.0;
  double total = 0.0;
};

inline LossBreakdown total_loss(double l_sm, std::optional<double> l_ds, double l_dc, const LossWeights& w = {}) {
  LossBreakdown b{l_sm, l_ds, l_dc, 0.0};
  b.total = w.sm * l_sm + (l_ds ? w.ds * *l_ds : 0.0) + w.dc * l_dc;
  return b;
}

// Mean over a batch. Examples without l_ds contribute zero to its mean, so
// the batch total is still the sum of the batch components.
inline LossBreakdown batch_mean(std::span<const LossBreakdown> parts) {
  LossBreakdown m;
  if (parts.empty()) return m;
  const double n = static_cast<double>(parts.size());
  double ds = 0.0;
  bool any_ds = false;
  for (const auto& p : parts) {
    m.l_sm += p.l_sm / n;
    m.l_dc += p.l_dc / n;
    m.total += p.total / n;
    if (p.l_ds) {
      ds += *p.l_ds / n;
      any_ds = true;
    }
  }
  if (any_ds) m.l_ds = ds;
  return m;
}

}  // namespace dcmatch
