#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hbm/model.hpp"
#include "hbm/optimizer.hpp"
#include "hbm/storage.hpp"

namespace hbm {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 4;
  AdamHyper adam{};  // lr 2e-5, eps 1e-8
  std::uint64_t seed = 0;
  bool rollback = true;
  bool shuffle = true;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  // Epoch whose parameters were the retained snapshot after this epoch.
  std::size_t checkpoint = 0;
};

struct SplitSpec {
  std::size_t train_pool_size = 200;
  std::size_t n = 200;
  std::uint64_t seed = 0;
};

// Indices into the dataset. train is a prefix of pool; test is everything
// outside the pool.
struct Split {
  std::vector<std::size_t> pool;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

Split subsample(std::size_t dataset_size, const SplitSpec& spec);

std::vector<const Document*> select(const EmbeddedDataset& dataset,
                                    std::span<const std::size_t> indices);
std::vector<const Document*> all_documents(const EmbeddedDataset& dataset);

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> history;
  std::size_t selected_epoch = 0;
  double selected_loss = 0.0;
};

TrainResult train(std::span<const Document* const> docs, const ModelConfig& config,
                  const TrainConfig& tconf);

// softmax(logits)[1] per document, dropout off.
std::vector<double> predict(const ModelParams& params, const ModelConfig& config,
                            std::span<const Document* const> docs);
double predict_one(const ModelParams& params, const ModelConfig& config, const Document& doc);

struct ExperimentSpec {
  std::vector<std::size_t> sizes{50, 100, 150, 200};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::size_t train_pool_size = 200;
  std::size_t threads = 1;
};

struct ExperimentCell {
  std::size_t n = 0;
  std::vector<double> aucs;  // one per seed, in seed order
  double mean = 0.0;
  double std_dev = 0.0;      // sample standard deviation

  // "0.9638±0.006"
  std::string formatted() const;
};

struct ExperimentResult {
  std::vector<std::uint64_t> seeds;
  std::vector<ExperimentCell> cells;

  // One tab-separated row per n: n, formatted cell, then the raw values.
  std::string table() const;
};

ExperimentResult run_experiment(const EmbeddedDataset& dataset, const ExperimentSpec& spec,
                                const ModelConfig& config, const TrainConfig& tconf);

std::string format_cell(double mean, double std_dev);

}  // namespace hbm
