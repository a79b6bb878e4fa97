#include <gtest/gtest.h>

#include "oracles.hpp"
#include "toonpose/catalog.hpp"
#include "toonpose/catalog_fixture.hpp"

using namespace toonpose;

namespace {

int id(const char* key) { return *parse_target_key(key); }

// n models named m000..; model i has every name in `common`, plus `rare` for the first k models
MorphCatalog small_catalog(int n, const std::vector<std::string>& common, const std::string& rare, int k,
                           int threshold) {
  std::vector<CatalogModel> models;
  for (int i = 0; i < n; ++i) {
    CatalogModel m;
    m.model_id = fixture_model_id(i);
    for (const auto& c : common) m.morphs.push_back({m.model_id, c, ""});
    if (i < k) m.morphs.push_back({m.model_id, rare, ""});
    models.push_back(m);
  }
  return MorphCatalog(models, CatalogConfig{threshold});
}

}  // namespace

TEST(Nfc, ComposesDecomposedKana) {
  const std::string composed = "びっくり";
  const std::string decomposed = "\xe3\x81\xb2\xe3\x82\x99\xe3\x81\xa3\xe3\x81\x8f\xe3\x82\x8a";  // ひ + U+3099
  EXPECT_NE(composed, decomposed);
  EXPECT_EQ(nfc(decomposed), composed);
  // compatibility forms are left alone
  EXPECT_NE(nfc("ｳｨﾝｸ"), "ウィンク");
}

TEST(Catalog, RejectsDuplicatesAndEmptyNames) {
  CatalogModel m{"a", "", {{"a", "あ", ""}, {"a", "あ", ""}}};
  EXPECT_THROW(MorphCatalog({m}), UsageError);
  CatalogModel e{"b", "", {{"b", "", ""}}};
  EXPECT_THROW(MorphCatalog({e}), UsageError);
  CatalogModel x{"c", "", {}};
  EXPECT_THROW(MorphCatalog({x, x}), UsageError);
}

TEST(Catalog, NfcVariantsGroupTogether) {
  CatalogModel a{"a", "", {{"a", "びっくり", ""}}};
  CatalogModel b{"b", "", {{"b", "\xe3\x81\xb2\xe3\x82\x99\xe3\x81\xa3\xe3\x81\x8f\xe3\x82\x8a", ""}}};
  MorphCatalog cat({a, b}, CatalogConfig{2});
  const auto groups = cat.group_candidates();
  ASSERT_EQ(groups.size(), 1u);
  EXPECT_EQ(groups[0].count, 2);
  EXPECT_FALSE(groups[0].filtered);
}

TEST(Catalog, GroupCandidatesSortedAndFiltered) {
  auto cat = small_catalog(60, {"あ", "まばたき"}, "rare_morph", 10, 50);
  // give "あ" fewer models than "まばたき" by building a bespoke catalog
  std::vector<CatalogModel> models = cat.models();
  for (int i = 0; i < 11; ++i) models[i].morphs.erase(models[i].morphs.begin());
  MorphCatalog cat2(models, CatalogConfig{50});
  const auto g = cat2.group_candidates();
  ASSERT_EQ(g.size(), 3u);
  EXPECT_EQ(g[0].name, "まばたき");
  EXPECT_EQ(g[0].count, 60);
  EXPECT_EQ(g[1].name, "あ");
  EXPECT_EQ(g[1].count, 49);
  EXPECT_TRUE(g[1].filtered);  // 49 < 50
  EXPECT_EQ(g[2].count, 10);
  EXPECT_TRUE(g[2].filtered);
}

TEST(Catalog, AnnotateGroupOneRecordPerModel) {
  auto cat = small_catalog(60, {"morph_X"}, "rare_morph", 10, 50);
  EXPECT_EQ(cat.annotate_group("morph_X", id("mouth/A")), 60u);
  EXPECT_EQ(cat.records().size(), 60u);
  EXPECT_EQ(cat.version(), 60u);
  for (const auto& [k, r] : cat.records()) {
    EXPECT_EQ(r.stage, Stage::group_annotated);
    EXPECT_EQ(r.target, id("mouth/A"));
  }
}

TEST(Catalog, FilteredGroupCannotBeAnnotated) {
  auto cat = small_catalog(60, {"morph_X"}, "rare_morph", 10, 50);
  try {
    cat.annotate_group("rare_morph", id("mouth/A"));
    FAIL() << "expected rejection";
  } catch (const AnnotationError& e) {
    EXPECT_EQ(e.reason(), "filtered_group");
  }
  EXPECT_EQ(cat.version(), 0u);
  EXPECT_THROW(cat.annotate_group("no_such_name", id("mouth/A")), AnnotationError);
  EXPECT_THROW(cat.annotate_group("morph_X", 23), UsageError);
  // a hand-written event cannot bypass the filter either
  EXPECT_THROW(cat.apply({{"m0000", "rare_morph"}, id("mouth/A"), Stage::group_annotated, "", ""}), AnnotationError);
}

TEST(Catalog, ReannotationReplacesOnlyUninspected) {
  auto cat = small_catalog(4, {"x"}, "", 0, 2);
  cat.annotate_group("x", id("mouth/A"));
  cat.inspect({"m0000", "x"}, Verdict::accept);
  EXPECT_EQ(cat.annotate_group("x", id("mouth/O")), 3u);
  EXPECT_EQ(cat.records().at({"m0000", "x"}).target, id("mouth/A"));
  EXPECT_EQ(cat.records().at({"m0001", "x"}).target, id("mouth/O"));
}

TEST(Catalog, InspectionRules) {
  auto cat = small_catalog(3, {"x", "y"}, "", 0, 2);
  try {
    cat.inspect({"m0000", "x"}, Verdict::accept);
    FAIL();
  } catch (const AnnotationError& e) {
    EXPECT_EQ(e.reason(), "not_annotated");
  }
  cat.annotate_group("x", id("eye/closed/both"));
  const auto rec = cat.inspect({"m0000", "x"}, Verdict::accept);
  EXPECT_EQ(rec.stage, Stage::inspected);
  EXPECT_EQ(rec.target, id("eye/closed/both"));
  const auto rej = cat.inspect({"m0001", "x"}, Verdict::reject);
  EXPECT_EQ(rej.target, kRejected);
  try {
    cat.inspect({"m0001", "x"}, Verdict::accept);
    FAIL();
  } catch (const AnnotationError& e) {
    EXPECT_EQ(e.reason(), "already_inspected");
  }
  EXPECT_THROW(cat.inspect({"m0009", "x"}, Verdict::accept), AnnotationError);
  // an inspection event may not change the target
  EXPECT_THROW(cat.apply({{"m0002", "x"}, id("mouth/A"), Stage::inspected, "", ""}), AnnotationError);
}

TEST(Catalog, AvailabilityHoldsOnlyAcceptedInspected) {
  auto cat = small_catalog(3, {"a", "b", "c"}, "", 0, 2);
  cat.annotate_group("a", id("mouth/A"));
  cat.annotate_group("b", id("mouth/E"));
  cat.annotate_group("c", id("eyebrow/raised/left"));
  cat.inspect({"m0000", "a"}, Verdict::accept);
  cat.inspect({"m0000", "b"}, Verdict::reject);
  // c is group-annotated only
  const auto av = cat.availability("m0000", 17);
  EXPECT_EQ(av.ids(), std::vector<int>{id("mouth/A")});
  EXPECT_EQ(av.seed, 17u);
  EXPECT_FALSE(av.has(id("mouth/E")));
  EXPECT_EQ(cat.availability("m0001").count(), 0);
  EXPECT_THROW(cat.availability("nope"), AnnotationError);
}

TEST(Catalog, OnlyRejectedGivesEmptyAvailability) {
  auto cat = small_catalog(2, {"a"}, "", 0, 2);
  cat.annotate_group("a", id("mouth/U"));
  cat.inspect({"m0000", "a"}, Verdict::reject);
  EXPECT_EQ(cat.availability("m0000").count(), 0);
}

TEST(Catalog, StatsProgress) {
  auto cat = small_catalog(4, {"a", "b"}, "", 0, 2);
  auto s = cat.stats();
  EXPECT_EQ(s.model_count, 4);
  EXPECT_EQ(s.unique_morph_names, 2);
  EXPECT_EQ(s.progress, 0.0);
  cat.annotate_group("a", id("mouth/A"));
  EXPECT_EQ(cat.stats().progress, 0.0);
  cat.inspect({"m0000", "a"}, Verdict::accept);
  cat.inspect({"m0001", "a"}, Verdict::reject);
  s = cat.stats();
  EXPECT_EQ(s.completed_models, 2);
  EXPECT_DOUBLE_EQ(s.progress, 0.5);
  EXPECT_EQ(s.target_morph_counts.at("m0000"), 1);
  EXPECT_EQ(s.target_morph_counts.at("m0001"), 0);
}

TEST(Catalog, ReplayIsDeterministic) {
  const auto fx = make_fixture_catalog(12, 5);
  MorphCatalog cat(fx.models, CatalogConfig{scaled_threshold(12)});
  simulate_annotator(cat, fx);
  ASSERT_GT(cat.events().size(), 50u);
  const MorphCatalog fresh(fx.models, CatalogConfig{scaled_threshold(12)});
  const auto a = replay(fresh, cat.events());
  const auto b = replay(fresh, cat.events());
  EXPECT_EQ(a.snapshot_text(), b.snapshot_text());
  EXPECT_EQ(a.mapping_table_text(), b.mapping_table_text());
  EXPECT_EQ(a.snapshot_text(), cat.snapshot_text());
}

TEST(Catalog, EventLogFileRoundTrip) {
  const auto dir = oracle::temp_dir("eventlog");
  auto cat = small_catalog(3, {"あ", "まばたき"}, "", 0, 2);
  {
    EventLogWriter w(dir / "log.jsonl");
    for (const auto& e : cat.plan_group_annotation("あ", id("mouth/A"), "ann", "2024-01-01T00:00:00Z")) {
      w.append(e);
      cat.apply(e);
    }
    const auto e = cat.plan_inspection({"m0001", "あ"}, Verdict::reject, "ann", "2024-01-01T00:00:01Z");
    w.append(e);
    cat.apply(e);
  }
  const auto events = read_event_log(dir / "log.jsonl");
  ASSERT_EQ(events.size(), 4u);
  EXPECT_EQ(events, cat.events());
  EXPECT_EQ(events[3].target, kRejected);
  const auto again = replay(small_catalog(3, {"あ", "まばたき"}, "", 0, 2), events);
  EXPECT_EQ(again.snapshot_text(), cat.snapshot_text());
  std::filesystem::remove_all(dir);
}

TEST(Catalog, MalformedLogLineIsAnIoError) {
  const auto dir = oracle::temp_dir("badlog");
  std::ofstream(dir / "log.jsonl") << "{\"model_id\": \"a\"}\n";
  EXPECT_THROW(read_event_log(dir / "log.jsonl"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Catalog, SaveLoadRoundTrip) {
  const auto dir = oracle::temp_dir("catalog_io");
  const auto fx = make_fixture_catalog(5, 1);
  MorphCatalog(fx.models).save(dir);
  const auto back = MorphCatalog::load(dir);
  ASSERT_EQ(back.models().size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(back.models()[i].morphs.size(), fx.models[i].morphs.size());
  EXPECT_THROW(MorphCatalog::load(dir / "missing"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Fixture, MouthAGroupMapsToMouthA) {
  const int n = 40;
  const auto fx = make_fixture_catalog(n, 9);
  MorphCatalog cat(fx.models, CatalogConfig{scaled_threshold(n)});
  bool found = false;
  for (const auto& g : cat.group_candidates()) found = found || g.name == "あ";
  EXPECT_TRUE(found);  // the group exists before annotation
  simulate_annotator(cat, fx);
  const auto table = cat.mapping_table_text();
  EXPECT_NE(table.find("あ"), std::string::npos);
  bool row_ok = false;
  std::istringstream in(table);
  std::string line;
  while (std::getline(in, line))
    if (line.find("\tMouth(A)") != std::string::npos) row_ok = line.rfind("あ", 0) == 0;
  EXPECT_TRUE(row_ok) << table;
}

TEST(Fixture, MostModelsEndUpWithManyTargets) {
  const int n = 60;
  const auto fx = make_fixture_catalog(n, 21);
  MorphCatalog cat(fx.models, CatalogConfig{scaled_threshold(n)});
  simulate_annotator(cat, fx);
  // oracle: count accepted targets straight from the ground truth and the event history
  std::map<std::string, std::set<int>> expected;
  for (const auto& e : cat.events())
    if (e.stage == Stage::inspected && e.target != kRejected) expected[e.source.model_id].insert(e.target);
  int over20 = 0, nonempty = 0;
  for (const auto& m : cat.models()) {
    const auto av = cat.availability(m.model_id);
    EXPECT_EQ(static_cast<std::size_t>(av.count()), expected[m.model_id].size());
    over20 += av.count() > 20;
    nonempty += !m.morphs.empty();
  }
  EXPECT_GT(over20, nonempty / 2);
}

TEST(Fixture, RejectedMorphsNeverAvailable) {
  const auto fx = make_fixture_catalog(40, 4, FixtureOptions{.mislabel_probability = 0.2});
  MorphCatalog cat(fx.models, CatalogConfig{scaled_threshold(40)});
  simulate_annotator(cat, fx);
  // the group target of each rejected morph stays unavailable unless
  // another accepted morph of the same model supplies it
  int rejected = 0;
  for (const auto& e : cat.events()) {
    if (e.stage != Stage::inspected || e.target != kRejected) continue;
    ++rejected;
    int group_target = kRejected;
    for (const auto& g : cat.events())
      if (g.source == e.source && g.stage == Stage::group_annotated) group_target = g.target;
    bool supplied = false;
    for (const auto& [k, r] : cat.records())
      if (k.model_id == e.source.model_id && r.stage == Stage::inspected && r.target == group_target) supplied = true;
    EXPECT_EQ(cat.availability(e.source.model_id).has(group_target), supplied);
  }
  EXPECT_GT(rejected, 0);
  // availability is always a subset of the group-annotated targets, and every
  // available target comes from an accepted record
  for (const auto& m : cat.models()) {
    std::set<int> annotated, accepted;
    for (const auto& e : cat.events())
      if (e.source.model_id == m.model_id) {
        if (e.stage == Stage::group_annotated) annotated.insert(e.target);
      }
    for (const auto& [k, r] : cat.records())
      if (k.model_id == m.model_id && r.stage == Stage::inspected && r.target != kRejected) accepted.insert(r.target);
    for (int t : cat.availability(m.model_id).ids()) {
      EXPECT_TRUE(annotated.count(t));
      EXPECT_TRUE(accepted.count(t));
    }
  }
}
