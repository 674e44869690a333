#include "hbm/saliency.hpp"

#include <algorithm>

#include "hbm/errors.hpp"
#include "hbm/loss_metrics.hpp"

namespace hbm {

std::vector<double> saliency_scores(const Mat& attention, std::size_t real_count) {
  if (attention.rows() != attention.cols()) throw ShapeError("saliency_scores: attention must be square");
  if (real_count > attention.cols()) {
    throw ShapeError("saliency_scores: real sentence count exceeds matrix size");
  }
  std::vector<double> scores(real_count, 0.0);
  for (std::size_t a = 0; a < attention.rows(); ++a)
    for (std::size_t j = 0; j < real_count; ++j) scores[j] += attention(a, j);
  return scores;
}

std::vector<std::size_t> select_salient(std::span<const double> scores, double ratio) {
  if (scores.empty()) throw DegenerateInputError("select_salient: no scores");
  const auto top = std::max_element(scores.begin(), scores.end());
  const double max_score = *top;
  if (!(max_score > 0.0)) throw DegenerateInputError("select_salient: all scores are zero");
  const auto argmax = static_cast<std::size_t>(top - scores.begin());
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j == argmax || scores[j] / max_score > ratio) out.push_back(j);
  }
  return out;
}

std::vector<std::size_t> SaliencyReport::salient_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < sentences.size(); ++j)
    if (sentences[j].salient) out.push_back(j);
  return out;
}

SaliencyReport explain(const Document& doc, const ModelParams& params, const ModelConfig& config,
                       double ratio) {
  if (doc.embeddings.cols() != config.embed_dim) {
    throw DataError("document " + std::to_string(doc.id) + " width does not match the model");
  }
  const SentenceMatrix input = pad_to_m(doc, config.max_sentences);
  Rng unused(0);
  const ForwardTrace trace = forward(input.values, params, config, unused, false, input.real_rows);

  SaliencyReport report;
  report.doc_id = doc.id;
  report.truth = doc.label;
  report.ratio = ratio;
  report.layer = config.saliency_layer;
  const auto probs = softmax(trace.logits);
  const auto best = std::max_element(probs.begin(), probs.end());
  report.predicted_class = static_cast<std::size_t>(best - probs.begin());
  report.predicted_probability = *best;

  const auto scores = saliency_scores(trace.attention.head_average(config.saliency_layer), input.real_rows);
  const auto salient = select_salient(scores, ratio);
  report.missing_text = !doc.sentences || doc.sentences->size() < scores.size();
  for (std::size_t j = 0; j < scores.size(); ++j) {
    SentenceSaliency s;
    s.score = scores[j];
    s.salient = std::binary_search(salient.begin(), salient.end(), j);
    if (!report.missing_text) s.text = (*doc.sentences)[j];
    report.sentences.push_back(std::move(s));
  }
  return report;
}

nlohmann::json report_to_json(const SaliencyReport& r) {
  nlohmann::json sentences = nlohmann::json::array();
  for (std::size_t j = 0; j < r.sentences.size(); ++j) {
    nlohmann::json s = {{"index", j}, {"score", r.sentences[j].score}, {"salient", r.sentences[j].salient}};
    if (r.sentences[j].text) s["text"] = *r.sentences[j].text;
    sentences.push_back(std::move(s));
  }
  return {{"id", r.doc_id},
          {"truth", r.truth},
          {"ratio", r.ratio},
          {"layer", r.layer},
          {"predicted_class", r.predicted_class},
          {"predicted_probability", r.predicted_probability},
          {"missing_text", r.missing_text},
          {"sentences", sentences}};
}

std::string to_string(Condition c) { return c == Condition::highlight ? "highlight" : "plain"; }

Condition condition_from_string(const std::string& s) {
  if (s == "highlight") return Condition::highlight;
  if (s == "plain") return Condition::plain;
  throw FormatError("unknown condition '" + s + "'");
}

AnnotationBundle export_bundle(std::span<const SaliencyReport> reports,
                               const EmbeddedDataset& dataset, Condition condition,
                               const std::vector<std::string>& label_options) {
  AnnotationBundle bundle;
  bundle.condition = condition;
  for (const auto& report : reports) {
    auto it = std::find_if(dataset.documents.begin(), dataset.documents.end(),
                           [&](const Document& d) { return d.id == report.doc_id; });
    if (it == dataset.documents.end()) {
      throw ExportError("report references unknown document id " + std::to_string(report.doc_id));
    }
    BundleDocument doc;
    doc.id = report.doc_id;
    doc.label_options = label_options;
    if (it->label < label_options.size()) doc.truth = label_options[it->label];
    for (std::size_t j = 0; j < report.sentences.size(); ++j) {
      const auto& s = report.sentences[j];
      BundleSentence bs;
      if (s.text) {
        bs.text = *s.text;
      } else if (it->sentences && j < it->sentences->size()) {
        bs.text = (*it->sentences)[j];
      } else {
        bs.text = "[sentence " + std::to_string(j + 1) + "]";
      }
      bs.score = s.score;
      bs.salient = condition == Condition::highlight && s.salient;
      doc.sentences.push_back(std::move(bs));
    }
    bundle.docs.push_back(std::move(doc));
  }
  return bundle;
}

nlohmann::json bundle_to_json(const AnnotationBundle& bundle) {
  nlohmann::json docs = nlohmann::json::array();
  for (const auto& d : bundle.docs) {
    nlohmann::json sentences = nlohmann::json::array();
    for (const auto& s : d.sentences) {
      sentences.push_back({{"text", s.text}, {"score", s.score}, {"salient", s.salient}});
    }
    nlohmann::json doc = {{"id", d.id}, {"label_options", d.label_options}, {"sentences", sentences}};
    if (d.truth) doc["truth"] = *d.truth;
    docs.push_back(std::move(doc));
  }
  return {{"version", bundle.version}, {"condition", to_string(bundle.condition)}, {"docs", docs}};
}

AnnotationBundle bundle_from_json(const nlohmann::json& j) {
  try {
    AnnotationBundle bundle;
    bundle.version = j.at("version").get<int>();
    bundle.condition = condition_from_string(j.at("condition").get<std::string>());
    for (const auto& d : j.at("docs")) {
      BundleDocument doc;
      doc.id = d.at("id").get<std::uint32_t>();
      doc.label_options = d.at("label_options").get<std::vector<std::string>>();
      if (d.contains("truth")) doc.truth = d.at("truth").get<std::string>();
      for (const auto& s : d.at("sentences")) {
        doc.sentences.push_back(
            {s.at("text").get<std::string>(), s.at("score").get<double>(), s.at("salient").get<bool>()});
      }
      bundle.docs.push_back(std::move(doc));
    }
    return bundle;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed annotation bundle: ") + e.what());
  }
}

void write_bundle(const std::filesystem::path& path, const AnnotationBundle& bundle) {
  write_file(path, bundle_to_json(bundle).dump(2) + "\n");
}

AnnotationBundle read_bundle(const std::filesystem::path& path) {
  try {
    return bundle_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("annotation bundle is not JSON: ") + e.what());
  }
}

}  // namespace hbm
