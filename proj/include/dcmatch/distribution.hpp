#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dcmatch/error.hpp"

namespace dcmatch {

// Probability vector over the K ordinal match classes.
class MatchDistribution {
 public:
  static constexpr double kSumTolerance = 1e-9;

  MatchDistribution() = default;

  explicit MatchDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.size() < 2) throw Error("match distribution needs at least 2 classes");
    double sum = 0.0;
    for (double p : probs_) {
      if (!std::isfinite(p) || p < 0.0) throw Error("match distribution entries must be finite and >= 0");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kSumTolerance)
      throw Error("match distribution must sum to 1 (got " + std::to_string(sum) + ")");
  }

  // Numerically stable softmax.
  static MatchDistribution from_logits(std::span<const double> logits) {
    if (logits.size() < 2) throw Error("softmax needs at least 2 logits");
    double mx = -INFINITY;
    for (double z : logits) {
      if (!std::isfinite(z)) throw Error("softmax: non-finite logit");
      mx = std::max(mx, z);
    }
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) sum += p[i] = std::exp(logits[i] - mx);
    for (double& x : p) x /= sum;
    MatchDistribution d;
    d.probs_ = std::move(p);
    return d;
  }

  std::size_t num_classes() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const { return probs_; }

  // Ties go to the lower class.
  int argmax() const {
    return static_cast<int>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
  }

 private:
  std::vector<double> probs_;
};

// Pulls dL/dp back through the softmax: dL/dz_j = p_j (g_j - sum_i p_i g_i).
inline std::vector<double> softmax_backward(const MatchDistribution& p, std::span<const double> d_probs) {
  double dot = 0.0;
  for (std::size_t i = 0; i < p.num_classes(); ++i) dot += p[i] * d_probs[i];
  std::vector<double> d_logits(p.num_classes());
  for (std::size_t i = 0; i < p.num_classes(); ++i) d_logits[i] = p[i] * (d_probs[i] - dot);
  return d_logits;
}

}  // namespace dcmatch
