#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hbm/model.hpp"
#include "json.hpp"

namespace hbm {

struct Document {
  std::uint32_t id = 0;
  std::uint32_t label = 0;
  Mat embeddings;  // s x d, one row per real sentence
  std::optional<std::vector<std::string>> sentences;

  std::size_t sentence_count() const { return embeddings.rows(); }
};

struct EmbeddedDataset {
  std::uint32_t embed_dim = 0;
  std::vector<Document> documents;

  const Document& find(std::uint32_t id) const;
  // Throws DataError unless every document fits the model's width and
  // label range.
  void check_compatible(const ModelConfig& config) const;
};

// The m x d input of the sentence encoder plus how many leading rows are real.
struct SentenceMatrix {
  Mat values;
  std::size_t real_rows = 0;
};

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

// HBE1 layout, all integers u32 little-endian:
//   "HBE1" version d_e count, then per document: id label s, s*d_e f32 LE.
std::string encode_dataset(const EmbeddedDataset& dataset);
EmbeddedDataset decode_dataset(std::string_view bytes);

std::filesystem::path sidecar_path(const std::filesystem::path& dataset_path);

// Writes the binary file and, when any document carries sentence texts, the
// "<path>.sentences.json" sidecar mapping id -> list of sentences.
void write_dataset(const std::filesystem::path& path, const EmbeddedDataset& dataset);
EmbeddedDataset read_dataset(const std::filesystem::path& path);

// Rows [0, min(s, m)) are copied, the rest are zero. Longer documents are
// cut to their first m sentences.
SentenceMatrix pad_to_m(const Document& doc, std::size_t m);

struct TrainingMeta {
  std::uint64_t epoch = 0;
  double loss = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  TrainingMeta meta;
};

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

// "HBMC" magic, u32 version, u64 header length, compact JSON header
// (config, meta, tensor directory with name/shape/byte offset), then the
// f32 little-endian payload.
std::string encode_checkpoint(const Checkpoint& checkpoint);
// With `expected`, a differing stored config raises ConfigMismatchError.
Checkpoint decode_checkpoint(std::string_view bytes, const ModelConfig* expected = nullptr);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const ModelConfig* expected = nullptr);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace hbm
