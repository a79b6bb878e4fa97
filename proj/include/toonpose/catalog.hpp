#pragma once

// Source-morph catalog and the two-stage semantic annotation workflow.
//
// Annotations are an append-only event log; the mapping snapshot is derived
// by replaying it. A group annotation emits one `group_annotated` event per
// model that has the (NFC-normalized) morph name; an inspection promotes a
// record to `inspected`, either keeping its target or marking it REJECTED.
// Inspected records are final.

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "toonpose/errors.hpp"
#include "toonpose/pose.hpp"
#include "toonpose/sampler.hpp"

namespace toonpose {

inline constexpr int kRejected = -1;
inline constexpr int kDefaultFrequencyThreshold = 50;

/// Unicode NFC normalization of a UTF-8 string.
inline std::string nfc(std::string_view s) {
  UErrorCode err = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(err);
  if (U_FAILURE(err)) throw std::runtime_error("ICU NFC normalizer unavailable");
  const icu::UnicodeString in = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  const icu::UnicodeString out = norm->normalize(in, err);
  if (U_FAILURE(err)) throw UsageError("cannot normalize morph name");
  std::string result;
  out.toUTF8String(result);
  return result;
}

inline std::string utc_now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct SourceKey {
  std::string model_id;
  std::string name;
  friend auto operator<=>(const SourceKey&, const SourceKey&) = default;
};

struct SourceMorph {
  std::string model_id;
  std::string name;
  std::string preview_image;  // morph applied at intensity 1.0
};

struct CatalogModel {
  std::string model_id;
  std::string neutral_image;
  std::vector<SourceMorph> morphs;
};

enum class Stage : std::uint8_t { group_annotated, inspected };
enum class Verdict : std::uint8_t { accept, reject };

inline std::string_view stage_name(Stage s) { return s == Stage::inspected ? "inspected" : "group_annotated"; }

/// One line of the annotation log, and equally one row of the snapshot.
struct AnnotationRecord {
  SourceKey source;
  int target = kRejected;  // target morph id or kRejected
  Stage stage = Stage::group_annotated;
  std::string annotator;
  std::string timestamp;  // UTC, ISO 8601

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};
using AnnotationEvent = AnnotationRecord;

struct GroupCandidate {
  std::string name;
  int count = 0;  // distinct models containing the name
  bool filtered = false;
};

struct CatalogStats {
  int model_count = 0;
  int unique_morph_names = 0;
  int completed_models = 0;
  double progress = 0.0;  // completed_models / model_count
  std::map<std::string, int> target_morph_counts;  // per model: accepted distinct targets
};

struct CatalogConfig {
  int frequency_threshold = kDefaultFrequencyThreshold;
};

inline nlohmann::json event_to_json(const AnnotationEvent& e) {
  nlohmann::json j;
  j["model_id"] = e.source.model_id;
  j["name"] = e.source.name;
  if (e.target == kRejected) j["target"] = "REJECT";
  else j["target"] = e.target;
  j["stage"] = std::string(stage_name(e.stage));
  j["annotator"] = e.annotator;
  j["timestamp"] = e.timestamp;
  return j;
}

inline AnnotationEvent event_from_json(const nlohmann::json& j) {
  AnnotationEvent e;
  try {
    e.source.model_id = j.at("model_id").get<std::string>();
    e.source.name = nfc(j.at("name").get<std::string>());
    const auto& t = j.at("target");
    if (t.is_string()) {
      if (t.get<std::string>() != "REJECT") throw UsageError("target must be an id or REJECT");
      e.target = kRejected;
    } else {
      e.target = t.get<int>();
    }
    const auto stage = j.at("stage").get<std::string>();
    if (stage == "group_annotated") e.stage = Stage::group_annotated;
    else if (stage == "inspected") e.stage = Stage::inspected;
    else throw UsageError("unknown stage '" + stage + "'");
    e.annotator = j.value("annotator", "");
    e.timestamp = j.value("timestamp", "");
  } catch (const nlohmann::json::exception& ex) {
    throw UsageError(std::string("malformed annotation event: ") + ex.what());
  }
  return e;
}

class MorphCatalog {
 public:
  explicit MorphCatalog(std::vector<CatalogModel> models, CatalogConfig config = {})
      : models_(std::move(models)), config_(config) {
    for (std::size_t i = 0; i < models_.size(); ++i) {
      auto& m = models_[i];
      if (m.model_id.empty()) throw UsageError("model id must be non-empty");
      if (!model_index_.emplace(m.model_id, i).second) throw UsageError("duplicate model id " + m.model_id);
      std::set<std::string> seen;
      for (auto& morph : m.morphs) {
        morph.model_id = m.model_id;
        morph.name = nfc(morph.name);
        if (morph.name.empty()) throw UsageError("empty morph name in model " + m.model_id);
        if (!seen.insert(morph.name).second)
          throw UsageError("duplicate morph name '" + morph.name + "' in model " + m.model_id);
        name_models_[morph.name].push_back(m.model_id);
      }
    }
  }

  /// Reads `catalog.jsonl` (one model per line:
  /// {"model_id", "neutral", "morphs": [{"name", "preview"}]}).
  static MorphCatalog load(const std::filesystem::path& dir, CatalogConfig config = {}) {
    const auto file = dir / "catalog.jsonl";
    std::ifstream in(file);
    if (!in) throw IoError("cannot open catalog " + file.string());
    std::vector<CatalogModel> models;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        CatalogModel m;
        m.model_id = j.at("model_id").get<std::string>();
        m.neutral_image = j.value("neutral", "");
        for (const auto& mj : j.at("morphs")) {
          m.morphs.push_back({m.model_id, mj.at("name").get<std::string>(), mj.value("preview", "")});
        }
        models.push_back(std::move(m));
      } catch (const nlohmann::json::exception& e) {
        throw IoError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    try {
      return MorphCatalog(std::move(models), config);
    } catch (const UsageError& e) {
      throw IoError(file.string() + ": " + e.what());
    }
  }

  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "catalog.jsonl", std::ios::binary);
    if (!out) throw IoError("cannot write catalog in " + dir.string());
    for (const auto& m : models_) {
      nlohmann::json j{{"model_id", m.model_id}, {"neutral", m.neutral_image}, {"morphs", nlohmann::json::array()}};
      for (const auto& morph : m.morphs) j["morphs"].push_back({{"name", morph.name}, {"preview", morph.preview_image}});
      out << j.dump() << '\n';
    }
  }

  const std::vector<CatalogModel>& models() const { return models_; }
  const CatalogConfig& config() const { return config_; }

  bool has_model(const std::string& id) const { return model_index_.count(id) != 0; }

  const CatalogModel& model(const std::string& id) const {
    auto it = model_index_.find(id);
    if (it == model_index_.end()) throw AnnotationError("unknown_model", "unknown model '" + id + "'");
    return models_[it->second];
  }

  const SourceMorph* find_morph(const SourceKey& key) const {
    auto it = model_index_.find(key.model_id);
    if (it == model_index_.end()) return nullptr;
    for (const auto& m : models_[it->second].morphs)
      if (m.name == key.name) return &m;
    return nullptr;
  }

  int occurrence_count(const std::string& name) const {
    auto it = name_models_.find(nfc(name));
    return it == name_models_.end() ? 0 : static_cast<int>(it->second.size());
  }

  bool is_filtered(const std::string& name) const { return occurrence_count(name) < config_.frequency_threshold; }

  /// Names grouped by exact (NFC) equality, most frequent first.
  std::vector<GroupCandidate> group_candidates() const {
    std::vector<GroupCandidate> out;
    out.reserve(name_models_.size());
    for (const auto& [name, models] : name_models_) {
      const int n = static_cast<int>(models.size());
      out.push_back({name, n, n < config_.frequency_threshold});
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.count > b.count; });
    return out;
  }

  std::vector<SourceKey> group_members(const std::string& name) const {
    std::vector<SourceKey> out;
    const std::string key = nfc(name);
    auto it = name_models_.find(key);
    if (it == name_models_.end()) return out;
    for (const auto& id : it->second) out.push_back({id, key});
    return out;
  }

  /// Events a group annotation would append (validated, not applied).
  std::vector<AnnotationEvent> plan_group_annotation(const std::string& name, int target, const std::string& annotator,
                                                     const std::string& timestamp) const {
    const std::string key = nfc(name);
    if (!name_models_.count(key)) throw AnnotationError("unknown_group", "no source morph named '" + key + "'");
    if (is_filtered(key))
      throw AnnotationError("filtered_group", "'" + key + "' occurs in " + std::to_string(occurrence_count(key)) +
                                                  " models, below the frequency threshold of " +
                                                  std::to_string(config_.frequency_threshold));
    target_morph(target);
    std::vector<AnnotationEvent> out;
    for (const auto& src : group_members(key)) {
      auto it = records_.find(src);
      if (it != records_.end() && it->second.stage == Stage::inspected) continue;
      out.push_back({src, target, Stage::group_annotated, annotator, timestamp});
    }
    return out;
  }

  /// Validates an inspection (not applied).
  AnnotationEvent plan_inspection(const SourceKey& raw, Verdict verdict, const std::string& annotator,
                                  const std::string& timestamp) const {
    const SourceKey key{raw.model_id, nfc(raw.name)};
    if (!find_morph(key)) throw AnnotationError("unknown_morph", "no source morph " + describe_key(key));
    auto it = records_.find(key);
    if (it == records_.end()) throw AnnotationError("not_annotated", describe_key(key) + " has no group annotation");
    if (it->second.stage == Stage::inspected)
      throw AnnotationError("already_inspected", describe_key(key) + " is already inspected");
    return {key, verdict == Verdict::accept ? it->second.target : kRejected, Stage::inspected, annotator, timestamp};
  }

  /// Validates and applies one event; the event joins the history.
  void apply(const AnnotationEvent& raw) {
    AnnotationEvent e = raw;
    e.source.name = nfc(e.source.name);
    if (!find_morph(e.source)) throw AnnotationError("unknown_morph", "event references unknown morph " + describe_key(e.source));
    if (e.stage == Stage::group_annotated) {
      if (e.target == kRejected) throw AnnotationError("invalid_event", "group annotations need a target");
      target_morph(e.target);
      if (is_filtered(e.source.name))
        throw AnnotationError("filtered_group", "'" + e.source.name + "' is below the frequency threshold");
      auto it = records_.find(e.source);
      if (it != records_.end() && it->second.stage == Stage::inspected)
        throw AnnotationError("already_inspected", describe_key(e.source) + " is already inspected");
    } else {
      auto it = records_.find(e.source);
      if (it == records_.end()) throw AnnotationError("not_annotated", describe_key(e.source) + " has no group annotation");
      if (it->second.stage == Stage::inspected)
        throw AnnotationError("already_inspected", describe_key(e.source) + " is already inspected");
      if (e.target != kRejected && e.target != it->second.target)
        throw AnnotationError("invalid_event", "inspection of " + describe_key(e.source) + " changes its target");
    }
    records_[e.source] = e;
    events_.push_back(std::move(e));
  }

  std::size_t annotate_group(const std::string& name, int target, const std::string& annotator = "",
                             const std::string& timestamp = utc_now_iso8601()) {
    const auto events = plan_group_annotation(name, target, annotator, timestamp);
    for (const auto& e : events) apply(e);
    return events.size();
  }

  AnnotationRecord inspect(const SourceKey& key, Verdict verdict, const std::string& annotator = "",
                           const std::string& timestamp = utc_now_iso8601()) {
    const auto e = plan_inspection(key, verdict, annotator, timestamp);
    apply(e);
    return e;
  }

  /// Targets with an accepted, inspected record for the model.
  MorphAvailability availability(const std::string& model_id, std::uint64_t seed = 0) const {
    model(model_id);
    MorphAvailability out;
    out.seed = seed;
    for (auto it = records_.lower_bound({model_id, ""}); it != records_.end() && it->first.model_id == model_id; ++it) {
      const auto& r = it->second;
      if (r.stage == Stage::inspected && r.target != kRejected) out.available.set(static_cast<std::size_t>(r.target));
    }
    return out;
  }

  /// A model is complete once it has records and none awaits inspection.
  bool model_complete(const std::string& model_id) const {
    bool any = false;
    for (auto it = records_.lower_bound({model_id, ""}); it != records_.end() && it->first.model_id == model_id; ++it) {
      any = true;
      if (it->second.stage != Stage::inspected) return false;
    }
    return any;
  }

  CatalogStats stats() const {
    CatalogStats s;
    s.model_count = static_cast<int>(models_.size());
    s.unique_morph_names = static_cast<int>(name_models_.size());
    for (const auto& m : models_) {
      if (model_complete(m.model_id)) ++s.completed_models;
      s.target_morph_counts[m.model_id] = availability(m.model_id).count();
    }
    s.progress = s.model_count ? static_cast<double>(s.completed_models) / s.model_count : 0.0;
    return s;
  }

  const std::map<SourceKey, AnnotationRecord>& records() const { return records_; }
  const std::vector<AnnotationEvent>& events() const { return events_; }
  std::uint64_t version() const { return events_.size(); }

  /// Final record per source morph, one TSV row each, sorted by key.
  std::string snapshot_text() const {
    std::string out = "model_id\tname\ttarget\tstage\tannotator\ttimestamp\n";
    for (const auto& [key, r] : records_) {
      out += key.model_id + '\t' + key.name + '\t' +
             (r.target == kRejected ? std::string("X") : target_key(target_morph(r.target))) + '\t' +
             std::string(stage_name(r.stage)) + '\t' + r.annotator + '\t' + r.timestamp + '\n';
    }
    return out;
  }

  /// Two-column table: accepted source names per target morph, most frequent
  /// first, e.g. "あ, ああ, あ2<TAB>Mouth(A)".
  std::string mapping_table_text() const {
    std::map<int, std::map<std::string, int>> by_target;
    for (const auto& [key, r] : records_)
      if (r.stage == Stage::inspected && r.target != kRejected) ++by_target[r.target][key.name];
    std::string out = "source_morphs\ttarget_morph\n";
    for (const auto& [target, names] : by_target) {
      std::vector<std::pair<std::string, int>> sorted(names.begin(), names.end());
      std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
      std::string cell;
      for (const auto& [name, n] : sorted) {
        if (!cell.empty()) cell += ", ";
        cell += name;
      }
      out += cell + '\t' + target_label(target_morph(target)) + '\n';
    }
    return out;
  }

  static std::string describe_key(const SourceKey& k) { return "(" + k.model_id + ", " + k.name + ")"; }

 private:
  std::vector<CatalogModel> models_;
  CatalogConfig config_;
  std::map<std::string, std::size_t> model_index_;
  std::map<std::string, std::vector<std::string>> name_models_;
  std::map<SourceKey, AnnotationRecord> records_;
  std::vector<AnnotationEvent> events_;
};

// ---------------------------------------------------------------------------
// Event log file

inline std::string event_line(const AnnotationEvent& e) { return event_to_json(e).dump() + "\n"; }

inline std::vector<AnnotationEvent> read_event_log(const std::filesystem::path& path) {
  std::vector<AnnotationEvent> out;
  if (!std::filesystem::exists(path)) return out;
  std::ifstream in(path);
  if (!in) throw IoError("cannot read event log " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(event_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

/// Applies a whole log to a fresh copy of the catalog.
inline MorphCatalog replay(MorphCatalog catalog, const std::vector<AnnotationEvent>& events) {
  for (const auto& e : events) catalog.apply(e);
  return catalog;
}

/// Append-only writer; each event is one flushed line.
class EventLogWriter {
 public:
  explicit EventLogWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::app | std::ios::binary) {
    if (!out_) throw IoError("cannot open event log " + path.string());
  }
  void append(const AnnotationEvent& e) { append_raw(event_line(e)); }
  // Several complete lines written and flushed as one block.
  void append_raw(const std::string& lines) {
    out_.write(lines.data(), static_cast<std::streamsize>(lines.size()));
    out_.flush();
    if (!out_) throw IoError("event log write failed: " + path_.string());
  }
  void flush() { out_.flush(); }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

}  // namespace toonpose
