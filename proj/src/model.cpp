#include "hbm/model.hpp"

#include <cmath>
#include <string>

#include "hbm/errors.hpp"

namespace hbm {

void ModelConfig::validate() const {
  if (embed_dim == 0) throw ConfigError("embed_dim must be > 0");
  if (max_sentences == 0) throw ConfigError("max_sentences must be >= 1");
  if (layers == 0) throw ConfigError("layers must be >= 1");
  if (heads == 0) throw ConfigError("heads must be >= 1");
  if (ffn_expansion == 0) throw ConfigError("ffn_expansion must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (!(layernorm_eps >= 0.0f) || !std::isfinite(layernorm_eps)) {
    throw ConfigError("layernorm_eps must be a finite non-negative value");
  }
  if (saliency_layer >= layers) throw ConfigError("saliency_layer out of range");
}

namespace {

template <class Set, class Ptr>
std::vector<Ptr> collect(Set& set) {
  std::vector<Ptr> out;
  for (auto& layer : set.layers) {
    for (auto& head : layer.heads) {
      out.push_back(&head.query);
      out.push_back(&head.key);
      out.push_back(&head.value);
    }
    out.push_back(&layer.attn_output);
    out.push_back(&layer.attn_gain);
    out.push_back(&layer.attn_bias);
    out.push_back(&layer.ffn_expand);
    out.push_back(&layer.ffn_contract);
    out.push_back(&layer.ffn_gain);
    out.push_back(&layer.ffn_bias);
  }
  out.push_back(&set.pooler);
  out.push_back(&set.classifier);
  return out;
}

}  // namespace

std::vector<Mat*> tensor_list(ParameterSet& set) { return collect<ParameterSet, Mat*>(set); }

std::vector<const Mat*> tensor_list(const ParameterSet& set) {
  return collect<const ParameterSet, const Mat*>(set);
}

std::vector<std::string> tensor_names(const ModelConfig& config) {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string prefix = "layer." + std::to_string(l) + ".";
    for (std::size_t h = 0; h < config.heads; ++h) {
      const std::string head = prefix + "head." + std::to_string(h) + ".";
      names.push_back(head + "query");
      names.push_back(head + "key");
      names.push_back(head + "value");
    }
    names.push_back(prefix + "attn_output");
    names.push_back(prefix + "attn_norm.gain");
    names.push_back(prefix + "attn_norm.bias");
    names.push_back(prefix + "ffn_expand");
    names.push_back(prefix + "ffn_contract");
    names.push_back(prefix + "ffn_norm.gain");
    names.push_back(prefix + "ffn_norm.bias");
  }
  names.push_back("pooler");
  names.push_back("classifier");
  return names;
}

ParameterSet zero_parameter_set(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.embed_dim;
  ParameterSet set;
  set.layers.resize(config.layers);
  for (auto& layer : set.layers) {
    layer.heads.resize(config.heads);
    for (auto& head : layer.heads) {
      head.query = Mat(d, d);
      head.key = Mat(d, d);
      head.value = Mat(d, d);
    }
    layer.attn_output = Mat(config.heads * d, d);
    layer.attn_gain = Mat(1, d);
    layer.attn_bias = Mat(1, d);
    layer.ffn_expand = Mat(d, config.ffn_expansion * d);
    layer.ffn_contract = Mat(config.ffn_expansion * d, d);
    layer.ffn_gain = Mat(1, d);
    layer.ffn_bias = Mat(1, d);
  }
  set.pooler = Mat(d, d);
  set.classifier = Mat(d, config.num_classes);
  return set;
}

Gradients zero_gradients(const ModelConfig& config) {
  Gradients g;
  static_cast<ParameterSet&>(g) = zero_parameter_set(config);
  return g;
}

void check_shapes(const ParameterSet& set, const ModelConfig& config) {
  const ParameterSet expected = zero_parameter_set(config);
  if (set.layers.size() != expected.layers.size()) {
    throw ShapeError("parameter set has " + std::to_string(set.layers.size()) +
                     " layers, config expects " + std::to_string(expected.layers.size()));
  }
  for (std::size_t l = 0; l < set.layers.size(); ++l) {
    if (set.layers[l].heads.size() != config.heads) {
      throw ShapeError("layer " + std::to_string(l) + " head count mismatch");
    }
  }
  const auto have = tensor_list(set);
  const auto want = tensor_list(expected);
  const auto names = tensor_names(config);
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (!have[i]->same_shape(*want[i])) throw ShapeError("tensor " + names[i] + " has wrong shape");
  }
}

ModelParams init_params(const ModelConfig& config, Rng& rng) {
  constexpr double kStd = 0.02;
  ModelParams params;
  static_cast<ParameterSet&>(params) = zero_parameter_set(config);
  auto fill_normal = [&](Mat& m) {
    for (float& v : m.values()) {
      double x = 0.0;
      do {
        x = rng.normal();
      } while (std::abs(x) > 2.0);
      v = static_cast<float>(x * kStd);
    }
  };
  for (auto& layer : params.layers) {
    for (auto& head : layer.heads) {
      fill_normal(head.query);
      fill_normal(head.key);
      fill_normal(head.value);
    }
    fill_normal(layer.attn_output);
    layer.attn_gain = Mat(1, config.embed_dim, 1.0f);
    fill_normal(layer.ffn_expand);
    fill_normal(layer.ffn_contract);
    layer.ffn_gain = Mat(1, config.embed_dim, 1.0f);
  }
  fill_normal(params.pooler);
  fill_normal(params.classifier);
  return params;
}

Mat AttentionRecord::head_average(std::size_t layer) const {
  const auto& heads = layers.at(layer);
  if (heads.size() == 1) return heads.front();
  Mat avg(heads.front().rows(), heads.front().cols());
  for (std::size_t i = 0; i < avg.size(); ++i) {
    double acc = 0.0;
    for (const Mat& a : heads) acc += a.values()[i];
    avg.values()[i] = static_cast<float>(acc / static_cast<double>(heads.size()));
  }
  return avg;
}

namespace {

std::size_t active_rows(const ModelConfig& config, std::size_t real_rows, std::size_t m) {
  if (!config.mask_padding || real_rows == kAll) return m;
  if (real_rows == 0) throw ShapeError("document has no real sentences");
  return std::min(real_rows, m);
}

void require_input_shape(const Mat& d, const ModelConfig& config, std::string_view op) {
  if (d.cols() != config.embed_dim || d.rows() == 0) {
    throw ShapeError(std::string(op) + ": expected m x " + std::to_string(config.embed_dim) +
                     " input, got " + std::to_string(d.rows()) + "x" + std::to_string(d.cols()));
  }
}

}  // namespace

MultiHeadOut multi_head(const Mat& d, const LayerParams& lp, const ModelConfig& config,
                        std::size_t real_rows) {
  require_input_shape(d, config, "multi_head");
  const std::size_t keys = active_rows(config, real_rows, d.rows());
  const float inv_sqrt_d = static_cast<float>(1.0 / std::sqrt(static_cast<double>(config.embed_dim)));
  MultiHeadOut out;
  std::vector<Mat> head_outputs;
  for (const auto& head : lp.heads) {
    HeadCache cache{matmul(d, head.query), matmul(d, head.key), matmul(d, head.value)};
    Mat scores = scaled(matmul_nt(cache.query, cache.key), inv_sqrt_d);
    Mat attn = softmax_rows(scores, keys);
    head_outputs.push_back(matmul(attn, cache.value));
    out.attention.push_back(std::move(attn));
    out.heads.push_back(std::move(cache));
  }
  out.concat = concat_cols(head_outputs);
  out.output = matmul(out.concat, lp.attn_output);
  return out;
}

BertAttOut bert_att(const Mat& d, const LayerParams& lp, const ModelConfig& config,
                    std::size_t real_rows) {
  BertAttOut out;
  out.attn = multi_head(d, lp, config, real_rows);
  auto norm = layer_norm(add(d, out.attn.output), lp.attn_gain.values(), lp.attn_bias.values(),
                         config.layernorm_eps);
  out.output = std::move(norm.y);
  out.norm = std::move(norm.cache);
  return out;
}

FfnOut ffn_block(const Mat& b, const LayerParams& lp, const ModelConfig& config, Rng& rng,
                 bool training) {
  require_input_shape(b, config, "ffn_block");
  FfnOut out;
  out.expanded = matmul(b, lp.ffn_expand);
  out.activated = relu(out.expanded);
  auto dropped = dropout(matmul(out.activated, lp.ffn_contract), config.dropout, rng, training);
  out.mask = std::move(dropped.mask);
  auto norm = layer_norm(add(b, dropped.y), lp.ffn_gain.values(), lp.ffn_bias.values(),
                         config.layernorm_eps);
  out.output = std::move(norm.y);
  out.norm = std::move(norm.cache);
  return out;
}

EncodeOut encode(const Mat& d, const ParameterSet& params, const ModelConfig& config, Rng& rng,
                 bool training, std::size_t real_rows) {
  require_input_shape(d, config, "encode");
  EncodeOut out;
  Mat x = d;
  for (const auto& lp : params.layers) {
    LayerTrace lt;
    lt.input = x;
    lt.att = bert_att(x, lp, config, real_rows);
    lt.ffn = ffn_block(lt.att.output, lp, config, rng, training);
    x = lt.ffn.output;
    out.attention.layers.push_back(lt.att.attn.attention);
    out.layers.push_back(std::move(lt));
  }
  out.encoded = std::move(x);
  return out;
}

Mat pool(const Mat& z, const ParameterSet& params, const ModelConfig& config,
         std::size_t real_rows) {
  return tanh(matmul(mean_rows(z, active_rows(config, real_rows, z.rows())), params.pooler));
}

std::vector<float> logits(const Mat& s, const ParameterSet& params) {
  if (s.rows() != 1) throw ShapeError("logits: document vector must be 1 x d");
  const Mat t = matmul(s, params.classifier);
  return {t.values().begin(), t.values().end()};
}

ForwardTrace forward(const Mat& d, const ModelParams& params, const ModelConfig& config, Rng& rng,
                     bool training, std::size_t real_rows) {
  config.validate();
  if (d.rows() != config.max_sentences || d.cols() != config.embed_dim) {
    throw ShapeError("forward: expected " + std::to_string(config.max_sentences) + "x" +
                     std::to_string(config.embed_dim) + " sentence matrix, got " +
                     std::to_string(d.rows()) + "x" + std::to_string(d.cols()));
  }
  check_shapes(params, config);
  ForwardTrace trace;
  trace.config = config;
  trace.params_generation = params.generation;
  trace.real_rows = real_rows == kAll ? d.rows() : std::min(real_rows, d.rows());
  auto enc = encode(d, params, config, rng, training, trace.real_rows);
  trace.layers = std::move(enc.layers);
  trace.attention = std::move(enc.attention);
  trace.encoded = std::move(enc.encoded);
  trace.mean = mean_rows(trace.encoded, active_rows(config, trace.real_rows, d.rows()));
  trace.doc_vector = tanh(matmul(trace.mean, params.pooler));
  trace.logits = logits(trace.doc_vector, params);
  return trace;
}

Mat bert_att_backward(const Mat& input, const BertAttOut& fwd, const LayerParams& lp,
                      const ModelConfig& config, const Mat& g, LayerParams& grads) {
  const std::size_t d = config.embed_dim;
  const float inv_sqrt_d = static_cast<float>(1.0 / std::sqrt(static_cast<double>(d)));

  auto norm = layer_norm_vjp(fwd.norm, lp.attn_gain.values(), g);
  add_in_place(grads.attn_gain, norm.dgain);
  add_in_place(grads.attn_bias, norm.dbias);

  // Residual: the normalised sum feeds both the input and the attention path.
  Mat dinput = norm.dx;
  auto out_grad = matmul_vjp(fwd.attn.concat, lp.attn_output, norm.dx);
  add_in_place(grads.attn_output, out_grad.db);

  const std::vector<std::size_t> widths(lp.heads.size(), d);
  const auto dheads = split_cols(out_grad.da, widths);
  for (std::size_t h = 0; h < lp.heads.size(); ++h) {
    const HeadCache& cache = fwd.attn.heads[h];
    const Mat& attn = fwd.attn.attention[h];
    auto av = matmul_vjp(attn, cache.value, dheads[h]);
    Mat dscores = scaled(softmax_rows_vjp(attn, av.da), inv_sqrt_d);
    Mat dquery = matmul(dscores, cache.key);
    Mat dkey = matmul_tn(dscores, cache.query);
    const Mat& dvalue = av.db;

    add_in_place(grads.heads[h].query, matmul_tn(input, dquery));
    add_in_place(grads.heads[h].key, matmul_tn(input, dkey));
    add_in_place(grads.heads[h].value, matmul_tn(input, dvalue));

    add_in_place(dinput, matmul_nt(dquery, lp.heads[h].query));
    add_in_place(dinput, matmul_nt(dkey, lp.heads[h].key));
    add_in_place(dinput, matmul_nt(dvalue, lp.heads[h].value));
  }
  return dinput;
}

Mat ffn_block_backward(const Mat& input, const FfnOut& fwd, const LayerParams& lp,
                       const Mat& g, LayerParams& grads) {
  auto norm = layer_norm_vjp(fwd.norm, lp.ffn_gain.values(), g);
  add_in_place(grads.ffn_gain, norm.dgain);
  add_in_place(grads.ffn_bias, norm.dbias);

  Mat dinput = norm.dx;
  const Mat dprojected = dropout_vjp(fwd.mask, norm.dx);
  auto contract = matmul_vjp(fwd.activated, lp.ffn_contract, dprojected);
  add_in_place(grads.ffn_contract, contract.db);
  const Mat dexpanded = relu_vjp(fwd.expanded, contract.da);
  auto expand = matmul_vjp(input, lp.ffn_expand, dexpanded);
  add_in_place(grads.ffn_expand, expand.db);
  add_in_place(dinput, expand.da);
  return dinput;
}

Gradients backward(const ForwardTrace& trace, const ModelParams& params,
                   std::span<const float> dlogits) {
  const ModelConfig& config = trace.config;
  if (trace.params_generation != params.generation) {
    throw IntegrityError("backward: trace was produced by a different parameter generation");
  }
  if (trace.layers.size() != config.layers || trace.logits.size() != config.num_classes ||
      trace.encoded.rows() != config.max_sentences) {
    throw IntegrityError("backward: trace is incomplete or does not match its config");
  }
  try {
    check_shapes(params, config);
  } catch (const ShapeError& e) {
    throw IntegrityError(std::string("backward: parameters do not match trace config: ") + e.what());
  }
  if (dlogits.size() != config.num_classes) {
    throw ShapeError("backward: dlogits length must equal num_classes");
  }

  Gradients grads = zero_gradients(config);
  const Mat dlog(1, config.num_classes, std::vector<float>(dlogits.begin(), dlogits.end()));

  auto cls = matmul_vjp(trace.doc_vector, params.classifier, dlog);
  grads.classifier = std::move(cls.db);
  const Mat dpre = tanh_vjp(trace.doc_vector, cls.da);
  auto pooler = matmul_vjp(trace.mean, params.pooler, dpre);
  grads.pooler = std::move(pooler.db);

  const std::size_t active =
      config.mask_padding ? std::min(trace.real_rows, trace.encoded.rows()) : trace.encoded.rows();
  Mat g = mean_rows_vjp(trace.encoded.rows(), pooler.da, active);

  for (std::size_t l = config.layers; l-- > 0;) {
    const LayerTrace& lt = trace.layers[l];
    const LayerParams& lp = params.layers[l];
    g = ffn_block_backward(lt.att.output, lt.ffn, lp, g, grads.layers[l]);
    g = bert_att_backward(lt.input, lt.att, lp, config, g, grads.layers[l]);
  }
  return grads;
}

}  // namespace hbm
