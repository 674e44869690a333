#include "hbm/loss_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "hbm/errors.hpp"

namespace hbm {

ClassWeights class_weights(std::span<const std::size_t> class_counts) {
  if (class_counts.size() < 2) throw ConfigError("class_weights: need at least two classes");
  std::size_t total = 0;
  for (std::size_t y = 0; y < class_counts.size(); ++y) {
    if (class_counts[y] == 0) {
      throw ConfigError("class_weights: class " + std::to_string(y) + " has no training examples");
    }
    total += class_counts[y];
  }
  const double k = static_cast<double>(class_counts.size());
  ClassWeights w;
  for (std::size_t c : class_counts) {
    w.weights.push_back(static_cast<double>(total) / (k * static_cast<double>(c)));
  }
  return w;
}

std::vector<double> softmax(std::span<const float> logits) {
  if (logits.empty()) throw ShapeError("softmax: empty logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

LossAndGrad weighted_ce(std::span<const float> logits, std::size_t y, const ClassWeights& w) {
  if (y >= logits.size()) throw IndexError("weighted_ce: label index out of range");
  if (w.size() != logits.size()) throw ShapeError("weighted_ce: weight count != class count");
  for (float v : logits) {
    if (!std::isfinite(v)) throw NumericError("weighted_ce: non-finite logit");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - mx);
  const double log_sum = mx + std::log(sum);
  const double weight = w[y];
  LossAndGrad out;
  out.loss = weight * (log_sum - static_cast<double>(logits[y]));
  out.dlogits.resize(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const double p = std::exp(static_cast<double>(logits[j]) - log_sum);
    out.dlogits[j] = static_cast<float>(weight * (p - (j == y ? 1.0 : 0.0)));
  }
  return out;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    // Positions i..j (0-based) share the mean of ranks i+1..j+1.
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("auc: scores and labels differ in length");
  for (double s : scores) {
    if (std::isnan(s)) throw MetricError("auc: NaN score");
  }
  const auto ranks = average_ranks(scores);
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      positive_rank_sum += ranks[i];
      ++positives;
    } else if (labels[i] == 0) {
      ++negatives;
    } else {
      throw MetricError("auc: labels must be 0 or 1");
    }
  }
  if (positives == 0 || negatives == 0) throw MetricError("auc: both classes must be present");
  const double p = static_cast<double>(positives);
  const double n = static_cast<double>(negatives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

namespace {

double u_from_ranks(std::span<const double> ranks, const std::vector<bool>& in_a, double n_a) {
  double sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i)
    if (in_a[i]) sum += ranks[i];
  return sum - n_a * (n_a + 1.0) / 2.0;
}

}  // namespace

MannWhitneyResult mann_whitney_u(std::span<const double> group_a, std::span<const double> group_b) {
  if (group_a.empty() || group_b.empty()) throw MetricError("mann_whitney_u: empty group");
  std::vector<double> pooled(group_a.begin(), group_a.end());
  pooled.insert(pooled.end(), group_b.begin(), group_b.end());
  for (double v : pooled) {
    if (!std::isfinite(v)) throw MetricError("mann_whitney_u: non-finite observation");
  }
  const std::size_t total = pooled.size();
  const double n_a = static_cast<double>(group_a.size());
  const double n_b = static_cast<double>(group_b.size());
  const auto ranks = average_ranks(pooled);

  std::vector<bool> in_a(total, false);
  std::fill(in_a.begin(), in_a.begin() + static_cast<std::ptrdiff_t>(group_a.size()), true);

  MannWhitneyResult out;
  out.u = u_from_ranks(ranks, in_a, n_a);
  const double mean_u = n_a * n_b / 2.0;
  const double observed = std::abs(out.u - mean_u);

  if (total <= 10) {
    // Enumerate every assignment of the pooled mid-ranks to group A.
    std::vector<bool> pick(total, false);
    std::fill(pick.end() - static_cast<std::ptrdiff_t>(group_a.size()), pick.end(), true);
    std::size_t extreme = 0;
    std::size_t count = 0;
    do {
      const double u = u_from_ranks(ranks, pick, n_a);
      if (std::abs(u - mean_u) >= observed - 1e-9) ++extreme;
      ++count;
    } while (std::next_permutation(pick.begin(), pick.end()));
    out.p_two_sided = static_cast<double>(extreme) / static_cast<double>(count);
    out.exact = true;
    return out;
  }

  // Tie correction: sum over tie groups of (t^3 - t).
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double n = static_cast<double>(total);
  const double variance = n_a * n_b / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (variance <= 0.0) {
    out.p_two_sided = 1.0;
    return out;
  }
  const double z = std::max(observed - 0.5, 0.0) / std::sqrt(variance);
  out.p_two_sided = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return out;
}

}  // namespace hbm
