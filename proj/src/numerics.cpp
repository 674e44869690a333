#include "hbm/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hbm/errors.hpp"

namespace hbm {

namespace {

std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Mat& a, const Mat& b, std::string_view op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
  }
}

std::size_t clamp_active(std::size_t active, std::size_t total) {
  return active == kAll ? total : std::min(active, total);
}

}  // namespace

Mat::Mat(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("Mat: data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

Mat Mat::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<float> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Mat::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Mat(r, c, std::move(data));
}

bool all_finite(const Mat& m) {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](float v) { return std::isfinite(v); });
}

void require_finite(const Mat& m, std::string_view op) {
  if (!all_finite(m)) {
    throw NumericError(std::string(op) + ": non-finite value");
  }
}

Mat transpose(const Mat& a) {
  Mat out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Mat add(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "add");
  Mat out = a;
  add_in_place(out, b);
  return out;
}

void add_in_place(Mat& acc, const Mat& b) {
  require_same_shape(acc, b, "add");
  auto dst = acc.values();
  auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  require_finite(acc, "add");
}

Mat hadamard(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "hadamard");
  Mat out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.values()[i] = a.values()[i] * b.values()[i];
  require_finite(out, "hadamard");
  return out;
}

Mat scaled(const Mat& a, float factor) {
  Mat out = a;
  for (float& v : out.values()) v *= factor;
  require_finite(out, "scaled");
  return out;
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a) + " x " + shape_str(b));
  }
  Mat out(a.rows(), b.cols());
  std::vector<double> acc(b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const float* brow = b.row(k).data();
      for (std::size_t j = 0; j < b.cols(); ++j) acc[j] += aik * brow[j];
    }
    float* orow = out.row(i).data();
    for (std::size_t j = 0; j < b.cols(); ++j) orow[j] = static_cast<float>(acc[j]);
  }
  require_finite(out, "matmul");
  return out;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + shape_str(a) + " x " + shape_str(b) + "^T");
  }
  Mat out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const float* arow = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const float* brow = b.row(j).data();
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k)
        acc += static_cast<double>(arow[k]) * brow[k];
      out(i, j) = static_cast<float>(acc);
    }
  }
  require_finite(out, "matmul_nt");
  return out;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: " + shape_str(a) + "^T x " + shape_str(b));
  }
  const std::size_t n = a.cols();
  const std::size_t p = b.cols();
  std::vector<double> acc(n * p, 0.0);
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const float* arow = a.row(k).data();
    const float* brow = b.row(k).data();
    for (std::size_t i = 0; i < n; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* dst = acc.data() + i * p;
      for (std::size_t j = 0; j < p; ++j) dst[j] += aki * brow[j];
    }
  }
  Mat out(n, p);
  for (std::size_t i = 0; i < acc.size(); ++i)
    out.values()[i] = static_cast<float>(acc[i]);
  require_finite(out, "matmul_tn");
  return out;
}

MatmulGrad matmul_vjp(const Mat& a, const Mat& b, const Mat& g) {
  if (a.cols() != b.rows() || g.rows() != a.rows() || g.cols() != b.cols()) {
    throw ShapeError("matmul_vjp: inconsistent shapes");
  }
  return {matmul_nt(g, b), matmul_tn(a, g)};
}

Mat softmax_rows(const Mat& x, std::size_t active_cols) {
  require_finite(x, "softmax_rows");
  const std::size_t active = clamp_active(active_cols, x.cols());
  if (active == 0 && x.cols() > 0) {
    throw ShapeError("softmax_rows: no active columns");
  }
  Mat out(x.rows(), x.cols());
  std::vector<double> e(active);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    const float mx = *std::max_element(in.begin(), in.begin() + active);
    double sum = 0.0;
    for (std::size_t j = 0; j < active; ++j) {
      e[j] = std::exp(static_cast<double>(in[j]) - mx);
      sum += e[j];
    }
    for (std::size_t j = 0; j < active; ++j)
      out(i, j) = static_cast<float>(e[j] / sum);
  }
  return out;
}

Mat softmax_rows_vjp(const Mat& s, const Mat& g) {
  require_same_shape(s, g, "softmax_rows_vjp");
  Mat out(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    auto srow = s.row(i);
    auto grow = g.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < s.cols(); ++j)
      dot += static_cast<double>(srow[j]) * grow[j];
    for (std::size_t j = 0; j < s.cols(); ++j)
      out(i, j) = static_cast<float>(srow[j] * (grow[j] - dot));
  }
  require_finite(out, "softmax_rows_vjp");
  return out;
}

LayerNormOut layer_norm(const Mat& x, std::span<const float> gain,
                        std::span<const float> bias, float eps) {
  if (gain.size() != x.cols() || bias.size() != x.cols()) {
    throw ShapeError("layer_norm: gain/bias length must equal cols");
  }
  require_finite(x, "layer_norm");
  const std::size_t n = x.cols();
  LayerNormOut res{Mat(x.rows(), n), {Mat(x.rows(), n), std::vector<double>(x.rows())}};
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    double mean = 0.0;
    for (float v : in) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (float v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + static_cast<double>(eps));
    res.cache.inv_std[i] = inv_std;
    for (std::size_t j = 0; j < n; ++j) {
      const double xhat = (in[j] - mean) * inv_std;
      res.cache.normalized(i, j) = static_cast<float>(xhat);
      res.y(i, j) = static_cast<float>(xhat * gain[j] + bias[j]);
    }
  }
  require_finite(res.y, "layer_norm");
  return res;
}

LayerNormGrad layer_norm_vjp(const LayerNormCache& cache,
                             std::span<const float> gain, const Mat& g) {
  const Mat& xhat = cache.normalized;
  require_same_shape(xhat, g, "layer_norm_vjp");
  if (gain.size() != g.cols()) throw ShapeError("layer_norm_vjp: gain length");
  const std::size_t n = g.cols();
  LayerNormGrad out{Mat(g.rows(), n), Mat(1, n), Mat(1, n)};
  std::vector<double> dgain(n, 0.0), dbias(n, 0.0), dxhat(n);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    auto grow = g.row(i);
    auto hrow = xhat.row(i);
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dgain[j] += static_cast<double>(grow[j]) * hrow[j];
      dbias[j] += grow[j];
      dxhat[j] = static_cast<double>(grow[j]) * gain[j];
      sum_dxhat += dxhat[j];
      sum_dxhat_xhat += dxhat[j] * hrow[j];
    }
    const double scale = cache.inv_std[i] / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) {
      out.dx(i, j) = static_cast<float>(
          scale * (static_cast<double>(n) * dxhat[j] - sum_dxhat -
                   hrow[j] * sum_dxhat_xhat));
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    out.dgain(0, j) = static_cast<float>(dgain[j]);
    out.dbias(0, j) = static_cast<float>(dbias[j]);
  }
  require_finite(out.dx, "layer_norm_vjp");
  return out;
}

Mat relu(const Mat& x) {
  require_finite(x, "relu");
  Mat out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.values()[i] = x.values()[i] > 0.0f ? x.values()[i] : 0.0f;
  return out;
}

Mat relu_vjp(const Mat& x, const Mat& g) {
  require_same_shape(x, g, "relu_vjp");
  Mat out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.values()[i] = x.values()[i] > 0.0f ? g.values()[i] : 0.0f;
  return out;
}

Mat tanh(const Mat& x) {
  require_finite(x, "tanh");
  Mat out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.values()[i] = std::tanh(x.values()[i]);
  return out;
}

Mat tanh_vjp(const Mat& y, const Mat& g) {
  require_same_shape(y, g, "tanh_vjp");
  Mat out(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double t = y.values()[i];
    out.values()[i] = static_cast<float>(g.values()[i] * (1.0 - t * t));
  }
  return out;
}

Mat mean_rows(const Mat& x, std::size_t active_rows) {
  const std::size_t active = clamp_active(active_rows, x.rows());
  if (active == 0) throw ShapeError("mean_rows: zero rows");
  std::vector<double> acc(x.cols(), 0.0);
  for (std::size_t i = 0; i < active; ++i) {
    auto in = x.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) acc[j] += in[j];
  }
  Mat out(1, x.cols());
  for (std::size_t j = 0; j < x.cols(); ++j)
    out(0, j) = static_cast<float>(acc[j] / static_cast<double>(active));
  require_finite(out, "mean_rows");
  return out;
}

Mat mean_rows_vjp(std::size_t rows, const Mat& g, std::size_t active_rows) {
  const std::size_t active = clamp_active(active_rows, rows);
  if (active == 0) throw ShapeError("mean_rows_vjp: zero rows");
  if (g.rows() != 1) throw ShapeError("mean_rows_vjp: gradient must be 1 x cols");
  Mat out(rows, g.cols());
  for (std::size_t i = 0; i < active; ++i)
    for (std::size_t j = 0; j < g.cols(); ++j)
      out(i, j) = static_cast<float>(static_cast<double>(g(0, j)) / static_cast<double>(active));
  return out;
}

DropoutOut dropout(const Mat& x, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout: probability must be in [0, 1)");
  }
  if (!training || p == 0.0) return {x, Mat(x.rows(), x.cols(), 1.0f)};
  const float keep_scale = static_cast<float>(1.0 / (1.0 - p));
  DropoutOut out{Mat(x.rows(), x.cols()), Mat(x.rows(), x.cols())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float m = rng.uniform() < p ? 0.0f : keep_scale;
    out.mask.values()[i] = m;
    out.y.values()[i] = x.values()[i] * m;
  }
  return out;
}

Mat dropout_vjp(const Mat& mask, const Mat& g) { return hadamard(mask, g); }

Mat concat_cols(std::span<const Mat> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Mat& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Mat out(rows, cols);
  std::size_t offset = 0;
  for (const Mat& p : parts) {
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(p.row(i).begin(), p.row(i).end(), out.row(i).begin() + offset);
    offset += p.cols();
  }
  return out;
}

std::vector<Mat> split_cols(const Mat& x, std::span<const std::size_t> widths) {
  std::size_t total = 0;
  for (auto w : widths) total += w;
  if (total != x.cols()) throw ShapeError("split_cols: widths do not sum to cols");
  std::vector<Mat> parts;
  parts.reserve(widths.size());
  std::size_t offset = 0;
  for (auto w : widths) {
    Mat p(x.rows(), w);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      auto src = x.row(i).subspan(offset, w);
      std::copy(src.begin(), src.end(), p.row(i).begin());
    }
    parts.push_back(std::move(p));
    offset += w;
  }
  return parts;
}

}  // namespace hbm
