#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hbm/numerics.hpp"
#include "hbm/rng.hpp"

namespace hbm {

struct ModelConfig {
  std::size_t embed_dim = 768;       // width of every sentence vector
  std::size_t max_sentences = 64;    // rows of the padded sentence matrix
  std::size_t layers = 4;
  std::size_t heads = 1;
  std::size_t ffn_expansion = 4;
  std::size_t num_classes = 2;
  double dropout = 0.01;
  float layernorm_eps = 1e-12f;
  bool mask_padding = false;
  std::size_t saliency_layer = 0;

  // Throws ConfigError describing the first violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct AttentionHeadParams {
  Mat query;  // d x d
  Mat key;    // d x d
  Mat value;  // d x d
};

struct LayerParams {
  std::vector<AttentionHeadParams> heads;
  Mat attn_output;  // h*d x d
  Mat attn_gain;    // 1 x d
  Mat attn_bias;    // 1 x d
  Mat ffn_expand;   // d x n*d
  Mat ffn_contract; // n*d x d
  Mat ffn_gain;     // 1 x d
  Mat ffn_bias;     // 1 x d
};

// Every trainable tensor of the sentence-level encoder, pooler and classifier.
struct ParameterSet {
  std::vector<LayerParams> layers;
  Mat pooler;      // d x d
  Mat classifier;  // d x num_classes
};

struct ModelParams : ParameterSet {
  // Bumped on every in-place update; a ForwardTrace remembers the value it
  // was computed against so backward can reject stale traces.
  std::uint64_t generation = 0;
};

struct Gradients : ParameterSet {};

// Tensors in canonical order (the checkpoint order). Names follow the same
// order as tensor_names().
std::vector<Mat*> tensor_list(ParameterSet& set);
std::vector<const Mat*> tensor_list(const ParameterSet& set);
std::vector<std::string> tensor_names(const ModelConfig& config);

// Structure with every tensor zero-filled at the shapes the config implies.
ParameterSet zero_parameter_set(const ModelConfig& config);
Gradients zero_gradients(const ModelConfig& config);

// Throws ShapeError if any tensor disagrees with the config.
void check_shapes(const ParameterSet& set, const ModelConfig& config);

// Weights ~ N(0, 0.02^2) truncated at two standard deviations, norm gains 1,
// norm biases 0.
ModelParams init_params(const ModelConfig& config, Rng& rng);

// attention[layer][head] is an m x m row-stochastic matrix; entry (a, j) is
// the weight sentence a puts on sentence j.
struct AttentionRecord {
  std::vector<std::vector<Mat>> layers;

  const Mat& at(std::size_t layer, std::size_t head) const { return layers.at(layer).at(head); }
  // Arithmetic mean over heads of one layer.
  Mat head_average(std::size_t layer) const;
};

struct HeadCache {
  Mat query;
  Mat key;
  Mat value;
};

struct MultiHeadOut {
  Mat output;
  std::vector<Mat> attention;
  std::vector<HeadCache> heads;
  Mat concat;
};

struct BertAttOut {
  Mat output;
  MultiHeadOut attn;
  LayerNormCache norm;
};

struct FfnOut {
  Mat output;
  Mat expanded;   // B * W^r
  Mat activated;  // relu(expanded)
  Mat mask;       // dropout mask over activated * W^S
  LayerNormCache norm;
};

struct LayerTrace {
  Mat input;
  BertAttOut att;
  FfnOut ffn;
};

struct EncodeOut {
  Mat encoded;
  AttentionRecord attention;
  std::vector<LayerTrace> layers;
};

struct ForwardTrace {
  ModelConfig config;
  std::uint64_t params_generation = 0;
  std::size_t real_rows = 0;
  std::vector<LayerTrace> layers;
  Mat encoded;      // Z
  Mat mean;         // Avg(Z)
  Mat doc_vector;   // S
  std::vector<float> logits;
  AttentionRecord attention;
};

// real_rows is the number of non-padding sentences; it only changes results
// when config.mask_padding is set.
MultiHeadOut multi_head(const Mat& d, const LayerParams& lp, const ModelConfig& config,
                        std::size_t real_rows = kAll);
BertAttOut bert_att(const Mat& d, const LayerParams& lp, const ModelConfig& config,
                    std::size_t real_rows = kAll);
FfnOut ffn_block(const Mat& b, const LayerParams& lp, const ModelConfig& config, Rng& rng,
                 bool training);
EncodeOut encode(const Mat& d, const ParameterSet& params, const ModelConfig& config, Rng& rng,
                 bool training, std::size_t real_rows = kAll);
Mat pool(const Mat& z, const ParameterSet& params, const ModelConfig& config,
         std::size_t real_rows = kAll);
std::vector<float> logits(const Mat& s, const ParameterSet& params);

ForwardTrace forward(const Mat& d, const ModelParams& params, const ModelConfig& config, Rng& rng,
                     bool training, std::size_t real_rows = kAll);

// Block-level reverse passes. Each accumulates parameter gradients into
// `grads` and returns the gradient with respect to the block input.
Mat bert_att_backward(const Mat& input, const BertAttOut& fwd, const LayerParams& lp,
                      const ModelConfig& config, const Mat& g, LayerParams& grads);
Mat ffn_block_backward(const Mat& input, const FfnOut& fwd, const LayerParams& lp,
                       const Mat& g, LayerParams& grads);

// Exact gradients of sum_k dlogits[k] * logits[k] with respect to every
// parameter. Throws IntegrityError if the trace does not belong to params.
Gradients backward(const ForwardTrace& trace, const ModelParams& params,
                   std::span<const float> dlogits);

}  // namespace hbm
