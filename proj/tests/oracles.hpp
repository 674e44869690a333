#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the code path it is used to check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "hbm/numerics.hpp"
#include "hbm/rng.hpp"

namespace hbm::oracle {

inline Mat random_mat(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Mat m(rows, cols);
  for (float& v : m.values()) v = static_cast<float>(rng.normal() * scale);
  return m;
}

// <c, m> accumulated in double; used as a scalar loss whose gradient wrt m is c.
inline double contract(const Mat& c, const Mat& m) {
  double acc = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i)
    acc += static_cast<double>(c.values()[i]) * m.values()[i];
  return acc;
}

// Central difference of f with respect to every entry of `param`, stepping
// by h and dividing by the perturbation actually representable in float.
inline Mat finite_difference(Mat& param, const std::function<double()>& f, double h = 1e-3) {
  Mat grad(param.rows(), param.cols());
  for (std::size_t i = 0; i < param.size(); ++i) {
    float& p = param.values()[i];
    const float original = p;
    const float up = static_cast<float>(original + h);
    const float down = static_cast<float>(original - h);
    p = up;
    const double f_up = f();
    p = down;
    const double f_down = f();
    p = original;
    grad.values()[i] = static_cast<float>((f_up - f_down) / (static_cast<double>(up) - down));
  }
  return grad;
}

// Tensor-level relative error ||a - b|| / max(||a||, ||b||).
inline double relative_error(const Mat& a, const Mat& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a.values()[i];
    const double y = b.values()[i];
    diff += (x - y) * (x - y);
    na += x * x;
    nb += y * y;
  }
  const double denom = std::max(std::sqrt(na), std::sqrt(nb));
  if (denom == 0.0) return 0.0;
  return std::sqrt(diff) / denom;
}

// Pairwise AUC: (#(pos > neg) + 0.5 #(pos == neg)) / (P N).
inline double brute_force_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// U of group a by direct pair counting.
inline double brute_force_u(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0.0;
  for (double x : a)
    for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  return u;
}

// Two-sided exact p by enumerating every split of the pooled sample using
// pair counts rather than ranks.
inline double exact_mann_whitney_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::size_t n = pooled.size();
  const double mean = static_cast<double>(a.size() * b.size()) / 2.0;
  const double observed = std::abs(brute_force_u(a, b) - mean);
  std::size_t extreme = 0, total = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != a.size()) continue;
    std::vector<double> ga, gb;
    for (std::size_t i = 0; i < n; ++i) ((mask >> i) & 1u ? ga : gb).push_back(pooled[i]);
    ++total;
    if (std::abs(brute_force_u(ga, gb) - mean) >= observed - 1e-9) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(total);
}

// Self-attention head by explicit scalar loops in double:
// softmax(D Wq (D Wk)^T / sqrt(d)) D Wv.
struct ScalarHead {
  std::vector<std::vector<double>> attention;
  std::vector<std::vector<double>> output;
};

inline std::vector<std::vector<double>> scalar_matmul(const std::vector<std::vector<double>>& a,
                                                      const Mat& b) {
  std::vector<std::vector<double>> out(a.size(), std::vector<double>(b.cols(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < b.rows(); ++k) out[i][j] += a[i][k] * b(k, j);
  return out;
}

inline std::vector<std::vector<double>> to_nested(const Mat& m) {
  std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

inline ScalarHead scalar_head(const Mat& d, const Mat& wq, const Mat& wk, const Mat& wv) {
  const auto x = to_nested(d);
  const auto q = scalar_matmul(x, wq);
  const auto k = scalar_matmul(x, wk);
  const auto v = scalar_matmul(x, wv);
  const std::size_t m = d.rows();
  const double scale = std::sqrt(static_cast<double>(d.cols()));
  ScalarHead out;
  out.attention.assign(m, std::vector<double>(m, 0.0));
  out.output.assign(m, std::vector<double>(v[0].size(), 0.0));
  for (std::size_t a = 0; a < m; ++a) {
    std::vector<double> s(m);
    double mx = -1e300;
    for (std::size_t j = 0; j < m; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < q[a].size(); ++c) dot += q[a][c] * k[j][c];
      s[j] = dot / scale;
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (double& e : s) {
      e = std::exp(e - mx);
      z += e;
    }
    for (std::size_t j = 0; j < m; ++j) out.attention[a][j] = s[j] / z;
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t c = 0; c < v[j].size(); ++c) out.output[a][c] += out.attention[a][j] * v[j][c];
  }
  return out;
}

}  // namespace hbm::oracle
