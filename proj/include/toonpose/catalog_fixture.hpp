#pragma once

// Synthetic source-morph catalogs: creator-style morph names, a ground-truth
// effect per morph, a simulated annotator, and preview rendering.

#include <array>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "toonpose/catalog.hpp"
#include "toonpose/image.hpp"
#include "toonpose/render.hpp"
#include "toonpose/rng.hpp"
#include "toonpose/synth_head.hpp"

namespace toonpose {

namespace fixture_names {

// Creator names observed per target morph, most common first (ids 0..22).
inline const std::array<std::vector<std::string_view>, kTargetMorphCount>& pools() {
  static const std::array<std::vector<std::string_view>, kTargetMorphCount> p = {{
      {"ウィンク", "ウィンク.001", "ウィンク2", "なごみ左"},          // eye closed L
      {"ウインク右", "なごみ右", "ウインク２右", "ｳｨﾝｸ２右"},          // eye closed R
      {"まばたき", "笑い", "なごみ"},                                  // eye closed both
      {"じと目左"},
      {"じと目右"},
      {"半目", "じと目", "ジト目"},
      {"びっくり左", "びっくり２左"},
      {"びっくり右", "びっくり２右"},
      {"びっくり", "びっくり２", "驚き"},
      {"怒り左", "怒り眉左", "怒りL"},                                 // brow angry L
      {"怒り右", "怒り眉右", "怒りR"},
      {"怒り眉", "怒り2", "怒り"},
      {"上左", "上L"},
      {"上右", "上R"},
      {"上"},
      {"困る左", "下L", "困るL", "下左"},
      {"困る右", "下R", "下右", "困るR"},
      {"困る", "下"},
      {"あ", "ああ", "あ2"},                                           // mouth
      {"え", "ええ", "え2", "えー"},
      {"い", "いい", "い2", "いー"},
      {"お", "おお"},
      {"う", "うう"},
  }};
  return p;
}

// Morphs with no counterpart among the targets.
inline const std::vector<std::string_view>& junk() {
  static const std::vector<std::string_view> j = {
      "頬染め", "涙", "照れ", "ハイライト消し", "瞳小", "白目", "星目", "はぅ", "にやり", "キリッ",
      "口角上げ", "ぺろっ", "舌", "ぐるぐる", "ω", "▲", "∧", "□", "青ざめ", "瞳大"};
  return j;
}

}  // namespace fixture_names

struct FixtureOptions {
  double include_probability = 0.95;  // per target morph
  double empty_model_fraction = 0.1;  // models with no morphs at all
  double mislabel_probability = 0.03; // name says one thing, morph does another
  int junk_min = 2;
  int junk_max = 8;
  bool decomposed_variants = true;    // some names stored in NFD form
};

struct FixtureCatalog {
  std::vector<CatalogModel> models;
  std::map<SourceKey, int> truth;  // actual effect per (NFC) source morph, kRejected if none
  std::map<std::string, std::uint64_t> character_seeds;
};

inline std::string fixture_model_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "m%04d", i);
  return buf;
}

namespace detail {

// Index drawn with weights 1, 1/2, 1/4, ...
inline std::size_t pick_geometric(Rng& rng, std::size_t n) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += std::ldexp(1.0, -static_cast<int>(i));
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < n; ++i) {
    u -= std::ldexp(1.0, -static_cast<int>(i));
    if (u < 0.0) return i;
  }
  return n - 1;
}

inline std::string nfd(std::string_view s) {
  UErrorCode err = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFDInstance(err);
  const icu::UnicodeString out =
      norm->normalize(icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size()))), err);
  std::string r;
  out.toUTF8String(r);
  return r;
}

}  // namespace detail

inline FixtureCatalog make_fixture_catalog(int n_models, std::uint64_t seed, const FixtureOptions& opt = {}) {
  if (n_models < 0) throw UsageError("model count must be non-negative");
  FixtureCatalog out;
  const auto& pools = fixture_names::pools();
  const auto& junk = fixture_names::junk();
  for (int i = 0; i < n_models; ++i) {
    CatalogModel m;
    m.model_id = fixture_model_id(i);
    const std::uint64_t cseed = substream_seed(m.model_id, seed);
    out.character_seeds[m.model_id] = cseed;
    Rng rng(cseed);
    const bool empty = rng.uniform() < opt.empty_model_fraction;
    if (!empty) {
      for (int t = 0; t < kTargetMorphCount; ++t) {
        if (rng.uniform() >= opt.include_probability) continue;
        const auto& pool = pools[static_cast<std::size_t>(t)];
        std::string name(pool[detail::pick_geometric(rng, pool.size())]);
        int effect = t;
        if (rng.uniform() < opt.mislabel_probability) {
          // broken morph: either no visible effect or a different one
          effect = rng.below(2) == 0 ? kRejected : static_cast<int>(rng.below(kTargetMorphCount));
          if (effect == t) effect = kRejected;
        }
        const bool dup = std::any_of(m.morphs.begin(), m.morphs.end(), [&](const auto& s) { return nfc(s.name) == name; });
        if (dup) continue;
        const std::string stored = opt.decomposed_variants && rng.below(8) == 0 ? detail::nfd(name) : name;
        m.morphs.push_back({m.model_id, stored, ""});
        out.truth[{m.model_id, name}] = effect;
      }
      const int n_junk = opt.junk_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(opt.junk_max - opt.junk_min + 1)));
      for (int j = 0; j < n_junk; ++j) {
        std::string name(junk[rng.below(junk.size())]);
        if (out.truth.count({m.model_id, name})) continue;
        m.morphs.push_back({m.model_id, name, ""});
        out.truth[{m.model_id, name}] = kRejected;
      }
    }
    out.models.push_back(std::move(m));
  }
  return out;
}

/// Scaled frequency threshold for small fixtures (the production value is
/// 50 models).
inline int scaled_threshold(int n_models, int production_models = 3613) {
  const double scaled = kDefaultFrequencyThreshold * static_cast<double>(n_models) / production_models;
  return std::max(2, static_cast<int>(std::lround(scaled)));
}

/// Group target a careful annotator would choose: the most common true effect
/// among the group's members, or kRejected when no member has an effect.
inline int majority_effect(const MorphCatalog& cat, const FixtureCatalog& fx, const std::string& name) {
  std::map<int, int> votes;
  for (const auto& key : cat.group_members(name)) {
    auto it = fx.truth.find(key);
    if (it != fx.truth.end() && it->second != kRejected) ++votes[it->second];
  }
  int best = kRejected, best_n = 0;
  for (const auto& [t, n] : votes)
    if (n > best_n) best = t, best_n = n;
  return best;
}

/// Drives the full workflow against ground truth: group-annotate every
/// unfiltered group with an effect, then inspect every record.
inline void simulate_annotator(MorphCatalog& cat, const FixtureCatalog& fx, const std::string& annotator = "fixture",
                               const std::string& timestamp = "2024-01-01T00:00:00Z") {
  for (const auto& g : cat.group_candidates()) {
    if (g.filtered) continue;
    const int target = majority_effect(cat, fx, g.name);
    if (target != kRejected) cat.annotate_group(g.name, target, annotator, timestamp);
  }
  std::vector<std::pair<SourceKey, int>> pending;
  for (const auto& [key, r] : cat.records())
    if (r.stage == Stage::group_annotated) pending.emplace_back(key, r.target);
  for (const auto& [key, target] : pending) {
    auto it = fx.truth.find(key);
    const bool ok = it != fx.truth.end() && it->second == target;
    cat.inspect(key, ok ? Verdict::accept : Verdict::reject, annotator, timestamp);
  }
}

/// Character descriptor used to render a fixture model's previews.
inline CharacterDescriptor fixture_character(const FixtureCatalog& fx, const std::string& model_id) {
  auto ch = CharacterDescriptor::from_seed(model_id, fx.character_seeds.at(model_id));
  ch.supported = MorphAvailability::all(ch.seed);
  return ch;
}

/// Writes catalog.jsonl plus neutral and morph-applied (intensity 1) previews
/// under images/<model>/.
inline FixtureCatalog write_fixture_catalog(const std::filesystem::path& dir, FixtureCatalog fx, int res = 256,
                                            int shader = 1) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
  for (auto& m : fx.models) {
    const auto ch = fixture_character(fx, m.model_id);
    const fs::path mdir = dir / "images" / m.model_id;
    fs::create_directories(mdir, ec);
    if (ec) throw IoError("cannot create " + mdir.string() + ": " + ec.message());
    write_png(mdir / "neutral.png", render(ch, PoseVector{}, shader, res).rgba);
    m.neutral_image = "images/" + m.model_id + "/neutral.png";
    for (std::size_t i = 0; i < m.morphs.size(); ++i) {
      auto& morph = m.morphs[i];
      PoseVector p;
      const int effect = fx.truth.at({m.model_id, nfc(morph.name)});
      if (effect != kRejected)
        for (int s : slots_of(target_morph(effect))) p.expr[static_cast<std::size_t>(s)] = 1.0;
      char file[32];
      std::snprintf(file, sizeof file, "%03zu.png", i);
      write_png(mdir / file, render(ch, p, shader, res).rgba);
      morph.preview_image = "images/" + m.model_id + "/" + file;
    }
  }
  MorphCatalog(fx.models).save(dir);
  return fx;
}

}  // namespace toonpose
