#pragma once

// End-to-end dataset pipeline: characters -> availability -> paired pose
// draws -> renders (one per shader) -> optional mapped poses -> manifest.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "toonpose/catalog.hpp"
#include "toonpose/errors.hpp"
#include "toonpose/hash.hpp"
#include "toonpose/image.hpp"
#include "toonpose/pose.hpp"
#include "toonpose/pose_mapping.hpp"
#include "toonpose/render.hpp"
#include "toonpose/sampler.hpp"
#include "toonpose/synth_head.hpp"

namespace toonpose {

inline constexpr const char* kPipelineVersion = "toonpose-dataset/1";
inline constexpr const char* kCountsPolicy = "per_shader_per_group";

struct DatasetConfig {
  int characters = 10;        // synthetic mode only
  std::vector<int> shaders = {1};
  int resolution = 256;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  int jobs = 1;
  std::filesystem::path catalog_dir;  // empty: synthetic characters
  int frequency_threshold = kDefaultFrequencyThreshold;  // catalog mode: must match the annotation session
  bool with_mapping = false;
  std::filesystem::path phi_path;     // empty: fit the default landmark model
  bool write_images = true;
  nlohmann::json effective_config = nlohmann::json::object();
};

/// A character ready for sampling: appearance plus annotated availability.
struct DatasetCharacter {
  CharacterDescriptor desc;
  MorphAvailability avail;  // avail.seed is the character's sampling substream
};

struct ManifestRecord {
  std::string model_id;
  std::string image;
  PoseGroup group = PoseGroup::frontalized_expression;
  int shader = 1;
  PoseVector pose;
  std::optional<MappedPose> mapped;
  std::uint64_t character_seed = 0;
  int draw_index = 0;
  int n_target_morphs = 0;
  std::uint64_t pixel_hash = 0;
};

struct ManifestHeader {
  std::string pipeline_version = kPipelineVersion;
  std::uint64_t seed = 0;
  std::vector<int> shaders;
  int resolution = 256;
  std::string counts_policy = kCountsPolicy;
  std::string phi_hash;  // empty without mapped poses
  std::size_t record_count = 0;
  nlohmann::json config = nlohmann::json::object();
};

struct Manifest {
  ManifestHeader header;
  std::vector<ManifestRecord> records;
};

inline bool record_less(const ManifestRecord& a, const ManifestRecord& b) {
  return std::tie(a.model_id, a.draw_index, a.group, a.shader) < std::tie(b.model_id, b.draw_index, b.group, b.shader);
}

inline std::string image_path(const std::string& model_id, int draw, PoseGroup g, int shader) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "/%04d_%s_s%d.png", draw, std::string(group_name(g)).c_str(), shader);
  return "images/" + model_id + buf;
}

// ---------------------------------------------------------------------------
// Characters

inline std::string synthetic_model_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "c%04d", i);
  return buf;
}

/// Synthetic mode: characters auto-annotated from their supported morphs.
inline DatasetCharacter synthetic_character(const std::string& model_id, std::uint64_t global_seed) {
  DatasetCharacter c;
  c.desc = CharacterDescriptor::from_seed(model_id, substream_seed(model_id, global_seed));
  c.avail = c.desc.supported;
  return c;
}

inline std::vector<DatasetCharacter> synthetic_characters(int n, std::uint64_t global_seed) {
  if (n < 0) throw UsageError("--characters must be non-negative");
  std::vector<DatasetCharacter> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(synthetic_character(synthetic_model_id(i), global_seed));
  return out;
}

/// Catalog mode: availability comes from the annotation snapshot.
inline std::vector<DatasetCharacter> catalog_characters(const std::filesystem::path& dir, std::uint64_t global_seed,
                                                        int frequency_threshold = kDefaultFrequencyThreshold) {
  const auto log = dir / "annotations.jsonl";
  if (!std::filesystem::exists(log)) throw IoError("missing annotation snapshot " + log.string());
  MorphCatalog cat = replay(MorphCatalog::load(dir, CatalogConfig{frequency_threshold}), read_event_log(log));
  std::vector<DatasetCharacter> out;
  for (const auto& m : cat.models()) {
    DatasetCharacter c;
    const std::uint64_t s = substream_seed(m.model_id, global_seed);
    c.desc = CharacterDescriptor::from_seed(m.model_id, s);
    c.desc.supported = MorphAvailability::all(s);
    c.avail = cat.availability(m.model_id, s);
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json header_to_json(const ManifestHeader& h) {
  return {{"kind", "header"},
          {"pipeline_version", h.pipeline_version},
          {"seed", h.seed},
          {"shaders", h.shaders},
          {"resolution", h.resolution},
          {"counts_policy", h.counts_policy},
          {"phi_hash", h.phi_hash},
          {"record_count", h.record_count},
          {"config", h.config}};
}

inline nlohmann::json record_to_json(const ManifestRecord& r) {
  nlohmann::json j = {{"kind", "record"},
                      {"model_id", r.model_id},
                      {"draw_index", r.draw_index},
                      {"group", std::string(group_name(r.group))},
                      {"shader", r.shader},
                      {"image", r.image},
                      {"pixel_hash", hex64(r.pixel_hash)},
                      {"pose", r.pose.flat()},
                      {"character_seed", r.character_seed},
                      {"n_target_morphs", r.n_target_morphs}};
  if (r.mapped) j["mapped_pose"] = r.mapped->m;
  return j;
}

inline std::uint64_t parse_hex64(const std::string& s) {
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(s, &used, 16);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw IoError("bad hash '" + s + "'");
  return v;
}

inline std::string manifest_text(const Manifest& m) {
  ManifestHeader h = m.header;
  h.record_count = m.records.size();
  std::string out = header_to_json(h).dump() + "\n";
  for (const auto& r : m.records) out += record_to_json(r).dump() + "\n";
  return out;
}

inline Manifest parse_manifest(const std::string& text, const std::string& where = "manifest") {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "header") {
        m.header.pipeline_version = j.at("pipeline_version").get<std::string>();
        m.header.seed = j.at("seed").get<std::uint64_t>();
        m.header.shaders = j.at("shaders").get<std::vector<int>>();
        m.header.resolution = j.at("resolution").get<int>();
        m.header.counts_policy = j.at("counts_policy").get<std::string>();
        m.header.phi_hash = j.at("phi_hash").get<std::string>();
        m.header.record_count = j.at("record_count").get<std::size_t>();
        m.header.config = j.at("config");
        have_header = true;
        continue;
      }
      if (kind != "record") throw IoError("unknown line kind '" + kind + "'");
      ManifestRecord r;
      r.model_id = j.at("model_id").get<std::string>();
      r.draw_index = j.at("draw_index").get<int>();
      const auto g = parse_group(j.at("group").get<std::string>());
      if (!g) throw IoError("unknown group");
      r.group = *g;
      r.shader = j.at("shader").get<int>();
      r.image = j.at("image").get<std::string>();
      r.pixel_hash = parse_hex64(j.at("pixel_hash").get<std::string>());
      r.pose = PoseVector::from_flat(j.at("pose").get<std::vector<double>>());
      r.character_seed = j.at("character_seed").get<std::uint64_t>();
      r.n_target_morphs = j.at("n_target_morphs").get<int>();
      if (j.contains("mapped_pose")) {
        const auto v = j.at("mapped_pose").get<std::vector<double>>();
        if (v.size() != static_cast<std::size_t>(kMappedDims)) throw IoError("mapped_pose must have 70 values");
        MappedPose mp;
        std::copy(v.begin(), v.end(), mp.m.begin());
        r.mapped = mp;
      }
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(where + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const UsageError& e) {
      throw IoError(where + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const IoError& e) {
      throw IoError(where + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw IoError(where + ": missing header line");
  return m;
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_text_file(path), path.string());
}
inline void write_manifest(const std::filesystem::path& path, const Manifest& m) { write_text_file(path, manifest_text(m)); }

/// Pose vectors as CSV, one row per record.
inline std::string pose_csv(const Manifest& m) {
  std::string out = "model_id,draw_index,group,shader";
  for (int i = 0; i < kPoseDims; ++i) out += "," + slot_name(i);
  out += "\n";
  for (const auto& r : m.records) {
    out += r.model_id + "," + std::to_string(r.draw_index) + "," + std::string(group_name(r.group)) + "," +
           std::to_string(r.shader) + "," + format_pose(r.pose) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Build

namespace detail {

inline void check_dataset_config(const DatasetConfig& cfg) {
  if (cfg.shaders.empty()) throw UsageError("--shaders must name at least one shader");
  std::set<int> seen;
  for (int s : cfg.shaders) {
    check_render_args(s, cfg.resolution);
    if (!seen.insert(s).second) throw UsageError("duplicate shader " + std::to_string(s));
  }
  if (cfg.jobs < 1) throw UsageError("--jobs must be at least 1");
  if (cfg.write_images && cfg.output_dir.empty()) throw UsageError("an output directory is required");
}

inline std::vector<ManifestRecord> build_character(const DatasetCharacter& c, const DatasetConfig& cfg,
                                                   const FittedBasis* fb) {
  std::vector<ManifestRecord> out;
  const int n_morphs = c.avail.count();
  const int draws = sample_count(n_morphs);
  const std::string& id = c.desc.model_id;
  if (cfg.write_images) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir / "images" / id, ec);
    if (ec) throw IoError("cannot create " + (cfg.output_dir / "images" / id).string() + ": " + ec.message());
  }
  for (int d = 0; d < draws; ++d) {
    for (PoseGroup g : {PoseGroup::frontalized_expression, PoseGroup::rotated_expression}) {
      // same stream for both groups: the rotated pose reuses the expression
      const PoseVector p = sample_pose(c.avail, g == PoseGroup::rotated_expression, static_cast<std::uint64_t>(d));
      std::optional<MappedPose> mapped;
      if (fb) mapped = map_pose(p, *fb);
      for (int shader : cfg.shaders) {
        ManifestRecord r;
        r.model_id = id;
        r.group = g;
        r.shader = shader;
        r.pose = p;
        r.mapped = mapped;
        r.character_seed = c.desc.seed;
        r.draw_index = d;
        r.n_target_morphs = n_morphs;
        r.image = image_path(id, d, g, shader);
        if (cfg.write_images) {
          const RenderedFrame frame = render(c.desc, p, shader, cfg.resolution);
          r.pixel_hash = pixel_hash(frame.rgba);
          write_png(cfg.output_dir / r.image, frame.rgba);
        }
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

}  // namespace detail

/// Runs the pipeline over `characters`. Work is spread over cfg.jobs threads;
/// the merged manifest does not depend on completion order.
inline Manifest build_dataset(const DatasetConfig& cfg, const std::vector<DatasetCharacter>& characters) {
  detail::check_dataset_config(cfg);
  {
    std::set<std::string> ids;
    for (const auto& c : characters)
      if (!ids.insert(c.desc.model_id).second) throw UsageError("duplicate model id " + c.desc.model_id);
  }
  if (cfg.write_images) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    if (ec || !std::filesystem::is_directory(cfg.output_dir))
      throw IoError("cannot create output directory " + cfg.output_dir.string());
  }

  std::optional<FittedBasis> fb;
  if (cfg.with_mapping) fb = cfg.phi_path.empty() ? build_phi(default_landmark_model(), default_rules()) : read_phi(cfg.phi_path);

  std::vector<std::vector<ManifestRecord>> parts(characters.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= characters.size()) return;
      try {
        parts[i] = detail::build_character(characters[i], cfg, fb ? &*fb : nullptr);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = characters.size();
      }
    }
  };
  const int n_threads = std::min<int>(cfg.jobs, static_cast<int>(std::max<std::size_t>(1, characters.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  Manifest m;
  for (auto& p : parts) std::move(p.begin(), p.end(), std::back_inserter(m.records));
  std::sort(m.records.begin(), m.records.end(), record_less);
  m.header.seed = cfg.seed;
  m.header.shaders = cfg.shaders;
  m.header.resolution = cfg.resolution;
  m.header.phi_hash = fb ? hex64(phi_hash(*fb)) : "";
  m.header.record_count = m.records.size();
  m.header.config = cfg.effective_config;
  if (cfg.write_images) write_manifest(cfg.output_dir / "manifest.jsonl", m);
  return m;
}

inline Manifest build_dataset(const DatasetConfig& cfg) {
  const auto characters = cfg.catalog_dir.empty() ? synthetic_characters(cfg.characters, cfg.seed)
                                                  : catalog_characters(cfg.catalog_dir, cfg.seed, cfg.frequency_threshold);
  return build_dataset(cfg, characters);
}

// ---------------------------------------------------------------------------
// Checks

/// Problems found in a manifest and its images; empty when consistent.
inline std::vector<std::string> verify_manifest(const Manifest& m, const std::filesystem::path& dir,
                                                bool check_images = true) {
  std::vector<std::string> problems;
  std::map<std::string, std::pair<int, int>> per_model;  // records, n_target_morphs
  for (const auto& r : m.records) {
    const std::string where = r.image + ": ";
    if (!validate(r.pose).empty()) problems.push_back(where + "invalid pose " + describe(validate(r.pose)));
    if (r.group == PoseGroup::frontalized_expression && (r.pose.yaw() != 0 || r.pose.pitch() != 0 || r.pose.roll() != 0))
      problems.push_back(where + "frontal record with nonzero angles");
    auto& pm = per_model[r.model_id];
    ++pm.first;
    pm.second = r.n_target_morphs;
    if (!check_images) continue;
    Image img;
    try {
      img = read_png(dir / r.image);
    } catch (const IoError& e) {
      problems.push_back(e.what());
      continue;
    }
    if (pixel_hash(img) != r.pixel_hash) problems.push_back(where + "pixel hash mismatch");
    bool any_alpha = false;
    for (std::size_t i = 3; i < img.pixels.size() && !any_alpha; i += 4) any_alpha = img.pixels[i] != 0;
    if (!any_alpha) problems.push_back(where + "empty alpha mask");
  }
  for (const auto& [id, c] : per_model) {
    const int expected = sample_count(c.second) * static_cast<int>(m.header.shaders.size()) * 2;
    if (c.first != expected)
      problems.push_back(id + ": " + std::to_string(c.first) + " records, expected " + std::to_string(expected));
  }
  return problems;
}

// ---------------------------------------------------------------------------
// Stats

struct AngleHistogram {
  static constexpr int kBins = 8;
  double lo = -kSamplerAngleLimitDeg;
  double hi = kSamplerAngleLimitDeg;
  std::array<std::size_t, kBins> bins{};
  std::size_t outside = 0;

  void add(double v) {
    if (v < lo || v > hi) {
      ++outside;
      return;
    }
    int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * kBins));
    bins[static_cast<std::size_t>(std::clamp(b, 0, kBins - 1))] += 1;
  }
};

struct DatasetStats {
  std::size_t records = 0;
  std::array<AngleHistogram, 3> angles;  // yaw, pitch, roll
  std::array<double, 3> angle_min{0, 0, 0};
  std::array<double, 3> angle_max{0, 0, 0};
  std::map<int, int> morph_count_models;  // n_target_morphs -> models
  double mean_target_morphs = 0.0;
  std::map<std::string, std::size_t> group_counts;
  std::map<int, std::size_t> shader_counts;
  std::size_t models = 0;
};

inline DatasetStats dataset_stats(const Manifest& m, std::optional<PoseGroup> only = std::nullopt) {
  DatasetStats s;
  std::map<std::string, int> model_morphs;
  bool first = true;
  for (const auto& r : m.records) {
    if (only && r.group != *only) continue;
    ++s.records;
    for (int a = 0; a < 3; ++a) {
      const double v = r.pose.angles_deg[static_cast<std::size_t>(a)];
      s.angles[static_cast<std::size_t>(a)].add(v);
      s.angle_min[a] = first ? v : std::min(s.angle_min[a], v);
      s.angle_max[a] = first ? v : std::max(s.angle_max[a], v);
    }
    first = false;
    ++s.group_counts[std::string(group_name(r.group))];
    ++s.shader_counts[r.shader];
    model_morphs[r.model_id] = r.n_target_morphs;
  }
  s.models = model_morphs.size();
  double total = 0;
  for (const auto& [id, n] : model_morphs) {
    ++s.morph_count_models[n];
    total += n;
  }
  s.mean_target_morphs = s.models ? total / static_cast<double>(s.models) : 0.0;
  return s;
}

inline nlohmann::json stats_to_json(const DatasetStats& s) {
  static constexpr const char* axes[3] = {"yaw", "pitch", "roll"};
  nlohmann::json angles = nlohmann::json::object();
  for (int a = 0; a < 3; ++a) {
    const auto& h = s.angles[static_cast<std::size_t>(a)];
    angles[axes[a]] = {{"lo", h.lo}, {"hi", h.hi}, {"bins", h.bins}, {"outside", h.outside},
                       {"min", s.angle_min[static_cast<std::size_t>(a)]}, {"max", s.angle_max[static_cast<std::size_t>(a)]}};
  }
  nlohmann::json morphs = nlohmann::json::object();
  for (const auto& [n, c] : s.morph_count_models) morphs[std::to_string(n)] = c;
  nlohmann::json shaders = nlohmann::json::object();
  for (const auto& [k, c] : s.shader_counts) shaders[std::to_string(k)] = c;
  return {{"records", s.records},
          {"models", s.models},
          {"angles", angles},
          {"target_morph_count_models", morphs},
          {"mean_target_morphs", s.mean_target_morphs},
          {"group_counts", s.group_counts},
          {"shader_counts", shaders}};
}

// ---------------------------------------------------------------------------
// Split

/// Partitions model ids by a seeded hash order; n_train = round(frac * n).
inline std::pair<std::vector<std::string>, std::vector<std::string>> split_models(std::vector<std::string> ids,
                                                                                  double train_fraction,
                                                                                  std::uint64_t seed = 0) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw UsageError("train fraction must be in (0, 1)");
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::stable_sort(ids.begin(), ids.end(), [seed](const std::string& a, const std::string& b) {
    return substream_seed(a, seed) < substream_seed(b, seed);
  });
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ids.size())));
  std::vector<std::string> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::string> test(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

inline std::pair<Manifest, Manifest> split_manifest(const Manifest& m, double train_fraction, std::uint64_t seed = 0) {
  std::vector<std::string> ids;
  for (const auto& r : m.records) ids.push_back(r.model_id);
  const auto [train_ids, test_ids] = split_models(ids, train_fraction, seed);
  const std::set<std::string> train_set(train_ids.begin(), train_ids.end());
  Manifest train, test;
  train.header = test.header = m.header;
  for (const auto& r : m.records) (train_set.count(r.model_id) ? train : test).records.push_back(r);
  train.header.record_count = train.records.size();
  test.header.record_count = test.records.size();
  return {train, test};
}

}  // namespace toonpose
