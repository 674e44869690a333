#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace hbm {

// Per-class loss weights, inverse to class frequency and averaging to 1.
struct ClassWeights {
  std::vector<double> weights;

  double operator[](std::size_t y) const { return weights.at(y); }
  std::size_t size() const { return weights.size(); }
};

// weight[y] = N / (K * count[y]).
ClassWeights class_weights(std::span<const std::size_t> class_counts);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<float> dlogits;
};

// weight[y] * -log softmax(logits)[y] and its gradient, via log-sum-exp.
LossAndGrad weighted_ce(std::span<const float> logits, std::size_t y, const ClassWeights& w);

// Numerically stable softmax of a logit vector.
std::vector<double> softmax(std::span<const float> logits);

// ROC AUC in its Mann-Whitney form, ties credited 0.5. labels are 0/1.
double auc(std::span<const double> scores, std::span<const int> labels);

struct MannWhitneyResult {
  double u = 0.0;           // U statistic of group_a
  double p_two_sided = 1.0;
  bool exact = false;       // true when p came from full enumeration
};

// Exact permutation p-value when the pooled size is <= 10, otherwise the
// tie-corrected normal approximation with continuity correction.
MannWhitneyResult mann_whitney_u(std::span<const double> group_a, std::span<const double> group_b);

// Average (mid) ranks, 1-based, of the values in their sorted order.
std::vector<double> average_ranks(std::span<const double> values);

}  // namespace hbm
