#include "hbm/trainer.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "hbm/errors.hpp"
#include "hbm/loss_metrics.hpp"

namespace hbm {

namespace {

// Independent generator streams derived from one seed.
enum Stream : std::uint64_t { kInitStream = 1, kShuffleStream = 2, kDropoutStream = 3, kSplitStream = 4 };

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
}

Split subsample(std::size_t dataset_size, const SplitSpec& spec) {
  if (spec.n == 0) throw ConfigError("training size n must be >= 1");
  if (spec.n > spec.train_pool_size) {
    throw ConfigError("training size n=" + std::to_string(spec.n) + " exceeds pool size " +
                      std::to_string(spec.train_pool_size));
  }
  if (dataset_size <= spec.train_pool_size) {
    throw ConfigError("dataset of " + std::to_string(dataset_size) +
                      " documents is too small for a pool of " + std::to_string(spec.train_pool_size));
  }
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed, kSplitStream);
  shuffle(order, rng);
  Split split;
  split.pool.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.train_pool_size));
  split.train.assign(split.pool.begin(), split.pool.begin() + static_cast<std::ptrdiff_t>(spec.n));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(spec.train_pool_size), order.end());
  return split;
}

std::vector<const Document*> select(const EmbeddedDataset& dataset,
                                    std::span<const std::size_t> indices) {
  std::vector<const Document*> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(&dataset.documents.at(i));
  return out;
}

std::vector<const Document*> all_documents(const EmbeddedDataset& dataset) {
  std::vector<const Document*> out;
  for (const auto& d : dataset.documents) out.push_back(&d);
  return out;
}

namespace {

void check_documents(std::span<const Document* const> docs, const ModelConfig& config) {
  for (const Document* doc : docs) {
    if (doc->embeddings.cols() != config.embed_dim) {
      throw DataError("document " + std::to_string(doc->id) + " has width " +
                      std::to_string(doc->embeddings.cols()) + ", model expects " +
                      std::to_string(config.embed_dim));
    }
    if (doc->label >= config.num_classes) {
      throw DataError("document " + std::to_string(doc->id) + " label out of range");
    }
  }
}

}  // namespace

TrainResult train(std::span<const Document* const> docs, const ModelConfig& config,
                  const TrainConfig& tconf) {
  config.validate();
  tconf.validate();
  if (docs.empty()) throw ConfigError("training set is empty");
  check_documents(docs, config);

  std::vector<std::size_t> counts(config.num_classes, 0);
  for (const Document* d : docs) counts[d->label] += 1;
  const ClassWeights weights = class_weights(counts);

  std::vector<SentenceMatrix> inputs;
  inputs.reserve(docs.size());
  for (const Document* d : docs) inputs.push_back(pad_to_m(*d, config.max_sentences));

  Rng init_rng(tconf.seed, kInitStream);
  Rng shuffle_rng(tconf.seed, kShuffleStream);
  Rng dropout_rng(tconf.seed, kDropoutStream);

  TrainResult result;
  result.params = init_params(config, init_rng);
  AdamState adam = adam_init(result.params, tconf.adam);

  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  double best_loss = std::numeric_limits<double>::infinity();
  ModelParams best = result.params;
  std::size_t best_epoch = 0;

  for (std::size_t epoch = 1; epoch <= tconf.epochs; ++epoch) {
    if (tconf.shuffle) shuffle(order, shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tconf.batch_size) {
      const std::size_t end = std::min(order.size(), start + tconf.batch_size);
      const float inv_batch = 1.0f / static_cast<float>(end - start);
      Gradients batch_grads = zero_gradients(config);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const ForwardTrace trace = forward(inputs[idx].values, result.params, config, dropout_rng,
                                           true, inputs[idx].real_rows);
        LossAndGrad lg = weighted_ce(trace.logits, docs[idx]->label, weights);
        if (!std::isfinite(lg.loss)) throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
        loss_sum += lg.loss;
        for (float& g : lg.dlogits) g *= inv_batch;
        const Gradients g = backward(trace, result.params, lg.dlogits);
        auto acc = tensor_list(batch_grads);
        const auto part = tensor_list(g);
        for (std::size_t t = 0; t < acc.size(); ++t) add_in_place(*acc[t], *part[t]);
      }
      adam_step(result.params, batch_grads, adam);
    }
    const double mean_loss = loss_sum / static_cast<double>(docs.size());
    if (mean_loss < best_loss) {
      best_loss = mean_loss;
      best_epoch = epoch;
      if (tconf.rollback) best = result.params;
    }
    result.history.push_back({epoch, mean_loss, tconf.rollback ? best_epoch : epoch});
  }

  if (tconf.rollback) {
    result.params = std::move(best);
    result.selected_epoch = best_epoch;
    result.selected_loss = best_loss;
  } else {
    result.selected_epoch = tconf.epochs;
    result.selected_loss = result.history.back().mean_loss;
  }
  return result;
}

double predict_one(const ModelParams& params, const ModelConfig& config, const Document& doc) {
  if (doc.embeddings.cols() != config.embed_dim) {
    throw DataError("document " + std::to_string(doc.id) + " width does not match the model");
  }
  const SentenceMatrix input = pad_to_m(doc, config.max_sentences);
  Rng unused(0);
  const ForwardTrace trace = forward(input.values, params, config, unused, false, input.real_rows);
  return softmax(trace.logits)[1];
}

std::vector<double> predict(const ModelParams& params, const ModelConfig& config,
                            std::span<const Document* const> docs) {
  std::vector<double> scores;
  scores.reserve(docs.size());
  for (const Document* doc : docs) scores.push_back(predict_one(params, config, *doc));
  return scores;
}

std::string format_cell(double mean, double std_dev) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f±%.3f", mean, std_dev);
  return buf;
}

std::string ExperimentCell::formatted() const { return format_cell(mean, std_dev); }

std::string ExperimentResult::table() const {
  std::string out = "n\tauc";
  for (auto s : seeds) out += "\tseed_" + std::to_string(s);
  out += "\n";
  char buf[32];
  for (const auto& cell : cells) {
    out += std::to_string(cell.n) + "\t" + cell.formatted();
    for (double a : cell.aucs) {
      std::snprintf(buf, sizeof buf, "\t%.17g", a);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

ExperimentResult run_experiment(const EmbeddedDataset& dataset, const ExperimentSpec& spec,
                                const ModelConfig& config, const TrainConfig& tconf) {
  config.validate();
  tconf.validate();
  dataset.check_compatible(config);
  if (spec.sizes.empty() || spec.seeds.empty()) throw ConfigError("experiment grid is empty");
  for (std::size_t n : spec.sizes) {
    if (n > spec.train_pool_size) {
      throw ConfigError("training size " + std::to_string(n) + " exceeds pool size " +
                        std::to_string(spec.train_pool_size));
    }
  }

  const std::size_t jobs = spec.sizes.size() * spec.seeds.size();
  std::vector<double> aucs(jobs, 0.0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t job = next.fetch_add(1);
      if (job >= jobs) return;
      try {
        const std::size_t n = spec.sizes[job / spec.seeds.size()];
        const std::uint64_t seed = spec.seeds[job % spec.seeds.size()];
        const Split split = subsample(dataset.documents.size(), {spec.train_pool_size, n, seed});
        TrainConfig cell_conf = tconf;
        cell_conf.seed = seed;
        const auto train_docs = select(dataset, split.train);
        const TrainResult trained = train(train_docs, config, cell_conf);
        const auto test_docs = select(dataset, split.test);
        const auto scores = predict(trained.params, config, test_docs);
        std::vector<int> labels;
        for (const Document* d : test_docs) labels.push_back(d->label == 1 ? 1 : 0);
        aucs[job] = auc(scores, labels);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(jobs);
        return;
      }
    }
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min(spec.threads, jobs));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  ExperimentResult result;
  result.seeds = spec.seeds;
  for (std::size_t i = 0; i < spec.sizes.size(); ++i) {
    ExperimentCell cell;
    cell.n = spec.sizes[i];
    cell.aucs.assign(aucs.begin() + static_cast<std::ptrdiff_t>(i * spec.seeds.size()),
                     aucs.begin() + static_cast<std::ptrdiff_t>((i + 1) * spec.seeds.size()));
    const double k = static_cast<double>(cell.aucs.size());
    cell.mean = std::accumulate(cell.aucs.begin(), cell.aucs.end(), 0.0) / k;
    double ss = 0.0;
    for (double a : cell.aucs) ss += (a - cell.mean) * (a - cell.mean);
    cell.std_dev = cell.aucs.size() > 1 ? std::sqrt(ss / (k - 1.0)) : 0.0;
    result.cells.push_back(std::move(cell));
  }
  return result;
}

}  // namespace hbm
