#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hbm/loss_metrics.hpp"
#include "hbm/saliency.hpp"
#include "json.hpp"

namespace hbm {

struct AnnotationRecord {
  std::uint32_t id = 0;
  std::string label;
  double ms = 0.0;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

// One participant's pass over a bundle, as exported by the annotation UI:
// {participant, condition, records:[{id, label, ms}]}
struct Session {
  std::string participant;
  Condition condition = Condition::highlight;
  std::vector<AnnotationRecord> records;

  double total_seconds() const;
  double max_document_seconds() const;
  // Fraction of records whose label matches truth[id]. Records without a
  // known truth count as wrong.
  double accuracy(const std::map<std::uint32_t, std::string>& truth) const;

  friend bool operator==(const Session&, const Session&) = default;
};

nlohmann::json session_to_json(const Session& s);
Session session_from_json(const nlohmann::json& j);
void write_session(const std::filesystem::path& path, const Session& s);
Session read_session(const std::filesystem::path& path);

std::map<std::uint32_t, std::string> bundle_truth(const AnnotationBundle& bundle);

struct CleaningRules {
  double min_accuracy = 0.6;          // below: excluded
  double min_total_seconds = 90.0;    // below: excluded
  double max_document_seconds = 420.0;  // above, on any one document: excluded
};

// Reason a session is dropped, or nullopt when it is kept.
std::optional<std::string> exclusion_reason(const Session& s, const std::map<std::uint32_t, std::string>& truth,
                                            const CleaningRules& rules = {});

struct ConditionSummary {
  std::size_t sessions = 0;
  std::size_t excluded = 0;
  double mean_total_seconds = 0.0;
  double mean_accuracy = 0.0;
  std::vector<double> total_seconds;  // kept sessions, input order
  std::vector<double> accuracies;
};

struct StudySummary {
  ConditionSummary highlight;
  ConditionSummary plain;
  MannWhitneyResult time_test;      // highlight vs plain total seconds
  MannWhitneyResult accuracy_test;  // highlight vs plain accuracy
};

// Throws DegenerateInputError when a condition has no sessions left.
StudySummary summarize(const std::vector<Session>& sessions, const std::map<std::uint32_t, std::string>& truth,
                       const CleaningRules& rules = {});

nlohmann::json summary_to_json(const StudySummary& s);

}  // namespace hbm
