#pragma once

#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "hbm/rng.hpp"

namespace hbm {

// Dense row-major 2-D tensor of 32-bit floats. Reductions inside the ops
// accumulate in double and round once on store.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, float fill = 0.0f);
  Mat(std::size_t rows, std::size_t cols, std::vector<float> data);

  static Mat from_rows(std::initializer_list<std::initializer_list<float>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  const std::vector<float>& storage() const { return data_; }

  bool same_shape(const Mat& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

inline constexpr std::size_t kAll = std::numeric_limits<std::size_t>::max();

// Throws NumericError naming `op` if any entry is NaN or infinite.
void require_finite(const Mat& m, std::string_view op);
bool all_finite(const Mat& m);

Mat transpose(const Mat& a);
Mat add(const Mat& a, const Mat& b);
Mat hadamard(const Mat& a, const Mat& b);
Mat scaled(const Mat& a, float factor);
void add_in_place(Mat& acc, const Mat& b);

Mat matmul(const Mat& a, const Mat& b);
// a * b^T and a^T * b without materialising the transpose.
Mat matmul_nt(const Mat& a, const Mat& b);
Mat matmul_tn(const Mat& a, const Mat& b);

struct MatmulGrad {
  Mat da;
  Mat db;
};
MatmulGrad matmul_vjp(const Mat& a, const Mat& b, const Mat& g);

// Row-wise softmax. Columns at index >= active_cols receive probability 0,
// which is how padded keys are excluded when masking is on.
Mat softmax_rows(const Mat& x, std::size_t active_cols = kAll);
Mat softmax_rows_vjp(const Mat& s, const Mat& g);

struct LayerNormCache {
  Mat normalized;                 // (x - mean) / sqrt(var + eps)
  std::vector<double> inv_std;    // per row
};

struct LayerNormOut {
  Mat y;
  LayerNormCache cache;
};

struct LayerNormGrad {
  Mat dx;
  Mat dgain;  // 1 x cols
  Mat dbias;  // 1 x cols
};

LayerNormOut layer_norm(const Mat& x, std::span<const float> gain,
                        std::span<const float> bias, float eps);
LayerNormGrad layer_norm_vjp(const LayerNormCache& cache,
                             std::span<const float> gain, const Mat& g);

Mat relu(const Mat& x);
Mat relu_vjp(const Mat& x, const Mat& g);

Mat tanh(const Mat& x);
// Takes the tanh output, not its input.
Mat tanh_vjp(const Mat& y, const Mat& g);

// Column-wise mean over the first active_rows rows (all rows by default).
Mat mean_rows(const Mat& x, std::size_t active_rows = kAll);
Mat mean_rows_vjp(std::size_t rows, const Mat& g, std::size_t active_rows = kAll);

struct DropoutOut {
  Mat y;
  Mat mask;  // 0 for dropped entries, 1/(1-p) for survivors
};

// Inverted dropout. Inference, or p == 0, is the identity and draws nothing
// from the generator.
DropoutOut dropout(const Mat& x, double p, Rng& rng, bool training);
Mat dropout_vjp(const Mat& mask, const Mat& g);

Mat concat_cols(std::span<const Mat> parts);
std::vector<Mat> split_cols(const Mat& x, std::span<const std::size_t> widths);

}  // namespace hbm
