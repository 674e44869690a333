#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hbm/model.hpp"
#include "hbm/storage.hpp"
#include "json.hpp"

namespace hbm {

inline constexpr double kDefaultSalientRatio = 0.9;

// Column sums of an m x m attention matrix, reported for the first
// real_count columns.
std::vector<double> saliency_scores(const Mat& attention, std::size_t real_count);

// Indices whose score / max(score) exceeds `ratio`; the argmax is always kept.
std::vector<std::size_t> select_salient(std::span<const double> scores,
                                        double ratio = kDefaultSalientRatio);

struct SentenceSaliency {
  double score = 0.0;
  bool salient = false;
  std::optional<std::string> text;
};

struct SaliencyReport {
  std::uint32_t doc_id = 0;
  std::uint32_t truth = 0;
  std::vector<SentenceSaliency> sentences;  // real sentences only
  double ratio = kDefaultSalientRatio;
  std::size_t layer = 0;
  std::size_t predicted_class = 0;
  double predicted_probability = 0.0;
  bool missing_text = false;

  std::vector<std::size_t> salient_indices() const;
};

SaliencyReport explain(const Document& doc, const ModelParams& params, const ModelConfig& config,
                       double ratio = kDefaultSalientRatio);

nlohmann::json report_to_json(const SaliencyReport& report);

enum class Condition { highlight, plain };

std::string to_string(Condition c);
Condition condition_from_string(const std::string& s);

struct BundleSentence {
  std::string text;
  double score = 0.0;
  bool salient = false;

  friend bool operator==(const BundleSentence&, const BundleSentence&) = default;
};

struct BundleDocument {
  std::uint32_t id = 0;
  std::vector<std::string> label_options;
  std::optional<std::string> truth;
  std::vector<BundleSentence> sentences;

  friend bool operator==(const BundleDocument&, const BundleDocument&) = default;
};

// The file the annotation UI loads:
// {version, condition, docs:[{id, label_options, truth?, sentences:[{text, score, salient}]}]}
struct AnnotationBundle {
  int version = 1;
  Condition condition = Condition::highlight;
  std::vector<BundleDocument> docs;

  friend bool operator==(const AnnotationBundle&, const AnnotationBundle&) = default;
};

// Plain bundles carry identical documents with every salient flag cleared.
// Throws ExportError when a report names a document the dataset lacks.
AnnotationBundle export_bundle(std::span<const SaliencyReport> reports,
                               const EmbeddedDataset& dataset, Condition condition,
                               const std::vector<std::string>& label_options);

nlohmann::json bundle_to_json(const AnnotationBundle& bundle);
AnnotationBundle bundle_from_json(const nlohmann::json& j);
void write_bundle(const std::filesystem::path& path, const AnnotationBundle& bundle);
AnnotationBundle read_bundle(const std::filesystem::path& path);

}  // namespace hbm
