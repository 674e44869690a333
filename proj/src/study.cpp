#include "hbm/study.hpp"

#include <algorithm>
#include <numeric>

#include "hbm/errors.hpp"
#include "hbm/storage.hpp"

namespace hbm {

double Session::total_seconds() const {
  double ms = 0.0;
  for (const auto& r : records) ms += r.ms;
  return ms / 1000.0;
}

double Session::max_document_seconds() const {
  double ms = 0.0;
  for (const auto& r : records) ms = std::max(ms, r.ms);
  return ms / 1000.0;
}

double Session::accuracy(const std::map<std::uint32_t, std::string>& truth) const {
  if (records.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& r : records) {
    const auto it = truth.find(r.id);
    if (it != truth.end() && it->second == r.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

nlohmann::json session_to_json(const Session& s) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : s.records) records.push_back({{"id", r.id}, {"label", r.label}, {"ms", r.ms}});
  return {{"participant", s.participant}, {"condition", to_string(s.condition)}, {"records", records}};
}

Session session_from_json(const nlohmann::json& j) {
  try {
    Session s;
    s.participant = j.at("participant").get<std::string>();
    s.condition = condition_from_string(j.at("condition").get<std::string>());
    for (const auto& r : j.at("records")) {
      AnnotationRecord rec{r.at("id").get<std::uint32_t>(), r.at("label").get<std::string>(),
                           r.at("ms").get<double>()};
      if (!(rec.ms > 0.0)) throw FormatError("session record " + std::to_string(rec.id) + " has elapsed ms <= 0");
      s.records.push_back(std::move(rec));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed session: ") + e.what());
  }
}

void write_session(const std::filesystem::path& path, const Session& s) {
  write_file(path, session_to_json(s).dump(2) + "\n");
}

Session read_session(const std::filesystem::path& path) {
  try {
    return session_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("session is not JSON: ") + e.what());
  }
}

std::map<std::uint32_t, std::string> bundle_truth(const AnnotationBundle& bundle) {
  std::map<std::uint32_t, std::string> out;
  for (const auto& d : bundle.docs)
    if (d.truth) out[d.id] = *d.truth;
  return out;
}

std::optional<std::string> exclusion_reason(const Session& s, const std::map<std::uint32_t, std::string>& truth,
                                            const CleaningRules& rules) {
  if (s.accuracy(truth) < rules.min_accuracy) return "accuracy below " + std::to_string(rules.min_accuracy);
  if (s.total_seconds() < rules.min_total_seconds) return "total time below " + std::to_string(rules.min_total_seconds) + " s";
  if (s.max_document_seconds() > rules.max_document_seconds) {
    return "a single document took more than " + std::to_string(rules.max_document_seconds) + " s";
  }
  return std::nullopt;
}

namespace {

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

nlohmann::json condition_json(const ConditionSummary& c) {
  return {{"sessions", c.sessions},
          {"excluded", c.excluded},
          {"kept", c.total_seconds.size()},
          {"mean_total_seconds", c.mean_total_seconds},
          {"mean_accuracy", c.mean_accuracy}};
}

nlohmann::json test_json(const MannWhitneyResult& r) {
  return {{"u", r.u}, {"p", r.p_two_sided}, {"exact", r.exact}};
}

}  // namespace

StudySummary summarize(const std::vector<Session>& sessions, const std::map<std::uint32_t, std::string>& truth,
                       const CleaningRules& rules) {
  StudySummary out;
  for (const auto& s : sessions) {
    ConditionSummary& c = s.condition == Condition::highlight ? out.highlight : out.plain;
    ++c.sessions;
    if (exclusion_reason(s, truth, rules)) {
      ++c.excluded;
      continue;
    }
    c.total_seconds.push_back(s.total_seconds());
    c.accuracies.push_back(s.accuracy(truth));
  }
  for (ConditionSummary* c : {&out.highlight, &out.plain}) {
    if (c->total_seconds.empty()) throw DegenerateInputError("a study condition has no sessions after cleaning");
    c->mean_total_seconds = mean(c->total_seconds);
    c->mean_accuracy = mean(c->accuracies);
  }
  out.time_test = mann_whitney_u(out.highlight.total_seconds, out.plain.total_seconds);
  out.accuracy_test = mann_whitney_u(out.highlight.accuracies, out.plain.accuracies);
  return out;
}

nlohmann::json summary_to_json(const StudySummary& s) {
  return {{"highlight", condition_json(s.highlight)},
          {"plain", condition_json(s.plain)},
          {"time_test", test_json(s.time_test)},
          {"accuracy_test", test_json(s.accuracy_test)}};
}

}  // namespace hbm
