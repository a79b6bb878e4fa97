#include <gtest/gtest.h>

#include <set>
#include <thread>

#include "toonpose/service.hpp"
#include "toonpose/catalog_fixture.hpp"
#include "toonpose/pose_mapping.hpp"
#include "httplib.h"
#include "json.hpp"
#include "oracles.hpp"

using namespace toonpose;
using nlohmann::json;

namespace {

std::string pct(const std::string& s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += hex[c >> 4];
      out += hex[c & 15];
    }
  }
  return out;
}

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new std::filesystem::path(oracle::temp_dir("service"));
    fx_ = new FixtureCatalog(write_fixture_catalog(*dir_ / "catalog", make_fixture_catalog(8, 13)));
  }
  static void TearDownTestSuite() {
    std::filesystem::remove_all(*dir_);
    delete dir_;
    delete fx_;
  }

  void SetUp() override {
    std::filesystem::remove(*dir_ / "catalog" / "annotations.jsonl");
    ServiceConfig cfg;
    cfg.catalog_dir = *dir_ / "catalog";
    cfg.frequency_threshold = 3;
    svc_ = std::make_unique<AnnotationService>(cfg);
    port_ = svc_->start();
    cli_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  void TearDown() override {
    cli_.reset();
    svc_.reset();
  }

  json get(const std::string& path, int expect = 200) {
    auto res = cli_->Get(path);
    EXPECT_TRUE(res) << path;
    if (!res) return {};
    EXPECT_EQ(res->status, expect) << path << " " << res->body;
    return json::parse(res->body);
  }
  json post(const std::string& path, const json& body, int expect = 200) {
    auto res = cli_->Post(path, body.dump(), "application/json");
    EXPECT_TRUE(res) << path;
    if (!res) return {};
    EXPECT_EQ(res->status, expect) << path << " " << res->body;
    return json::parse(res->body);
  }

  // most frequent unfiltered group
  std::string top_group() {
    const auto g = get("/groups");
    return g["groups"][0]["name"].get<std::string>();
  }

  static std::filesystem::path* dir_;
  static FixtureCatalog* fx_;
  std::unique_ptr<AnnotationService> svc_;
  std::unique_ptr<httplib::Client> cli_;
  int port_ = 0;
};

std::filesystem::path* ServiceTest::dir_ = nullptr;
FixtureCatalog* ServiceTest::fx_ = nullptr;

}  // namespace

TEST_F(ServiceTest, StatsMatchFixture) {
  const auto s = get("/stats");
  std::set<std::string> names;
  for (const auto& m : fx_->models)
    for (const auto& morph : m.morphs) names.insert(nfc(morph.name));
  EXPECT_EQ(s["model_count"], 8);
  EXPECT_EQ(s["unique_morph_names"], static_cast<int>(names.size()));
  EXPECT_EQ(s["progress"], 0.0);
  EXPECT_EQ(s["version"], 0);
}

TEST_F(ServiceTest, GroupsFilterAndSort) {
  const auto all = get("/groups");
  const auto some = get("/groups?min_count=5");
  int prev = 1 << 30;
  for (const auto& g : all["groups"]) {
    EXPECT_LE(g["count"].get<int>(), prev);
    prev = g["count"];
    EXPECT_EQ(g["filtered"].get<bool>(), g["count"].get<int>() < 3);
  }
  for (const auto& g : some["groups"]) EXPECT_GE(g["count"].get<int>(), 5);
  EXPECT_LT(some["groups"].size(), all["groups"].size());
  get("/groups?min_count=abc", 400);
}

TEST_F(ServiceTest, SamplesPairNeutralAndMorphImages) {
  const auto name = top_group();
  const auto s = get("/groups/" + pct(name) + "/samples");
  ASSERT_GT(s["samples"].size(), 0u);
  for (const auto& p : s["samples"]) {
    const auto neutral = cli_->Get(p["neutral"].get<std::string>());
    const auto morph = cli_->Get(p["morph"].get<std::string>());
    ASSERT_TRUE(neutral && morph);
    EXPECT_EQ(neutral->status, 200);
    EXPECT_EQ(morph->status, 200);
    EXPECT_EQ(neutral->body.substr(1, 3), "PNG");
  }
  const auto err = get("/groups/" + pct("存在しない") + "/samples", 404);
  EXPECT_EQ(err["error"]["reason"], "unknown_group");
}

TEST_F(ServiceTest, AnnotateThenSnapshotReadsYourWrites) {
  const auto name = top_group();
  const auto r = post("/groups/" + pct(name) + "/annotate", {{"target", "mouth/A"}});
  EXPECT_GT(r["created"].get<int>(), 0);
  EXPECT_EQ(r["version"], r["created"]);
  const auto snap = get("/snapshot");
  EXPECT_EQ(snap["version"], r["version"]);
  int found = 0;
  for (const auto& rec : snap["records"]) found += rec["name"] == name && rec["target"] == *parse_target_key("mouth/A");
  EXPECT_EQ(found, r["created"].get<int>());
  auto tsv = cli_->Get("/snapshot?format=tsv");
  ASSERT_TRUE(tsv);
  EXPECT_NE(tsv->body.find(name), std::string::npos);
}

TEST_F(ServiceTest, FilteredGroupIsRejected) {
  const auto all = get("/groups");
  std::string rare;
  for (const auto& g : all["groups"])
    if (g["filtered"].get<bool>()) rare = g["name"];
  ASSERT_FALSE(rare.empty());
  const auto e = post("/groups/" + pct(rare) + "/annotate", {{"target", 18}}, 422);
  EXPECT_EQ(e["error"]["reason"], "filtered_group");
  EXPECT_EQ(get("/stats")["version"], 0);
}

TEST_F(ServiceTest, RejectRemovesFromAvailability) {
  const auto name = top_group();
  post("/groups/" + pct(name) + "/annotate", {{"target", "mouth/E"}});
  const auto samples = get("/groups/" + pct(name) + "/samples")["samples"];
  const std::string a = samples[0]["model_id"], b = samples[1]["model_id"];
  post("/inspect", {{"model_id", a}, {"name", name}, {"verdict", "accept"}});
  post("/inspect", {{"model_id", b}, {"name", name}, {"verdict", "reject"}});
  const int e_id = *parse_target_key("mouth/E");
  const auto ma = get("/models/" + a + "/morphs");
  const auto mb = get("/models/" + b + "/morphs");
  EXPECT_NE(std::find(ma["availability"].begin(), ma["availability"].end(), e_id), ma["availability"].end());
  EXPECT_EQ(std::find(mb["availability"].begin(), mb["availability"].end(), e_id), mb["availability"].end());
  EXPECT_FALSE(svc_->snapshot().availability(b).has(e_id));
  const auto again = post("/inspect", {{"model_id", b}, {"name", name}, {"verdict", "accept"}}, 409);
  EXPECT_EQ(again["error"]["reason"], "already_inspected");
}

TEST_F(ServiceTest, BadRequestsCarryReasons) {
  auto res = cli_->Post("/inspect", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(json::parse(res->body)["error"]["reason"], "bad_request");
  EXPECT_EQ(post("/inspect", {{"model_id", "m0000"}, {"name", "x"}, {"verdict", "maybe"}}, 400)["error"]["reason"],
            "bad_request");
  EXPECT_EQ(get("/models/nope/morphs", 404)["error"]["reason"], "unknown_model");
  EXPECT_EQ(post("/inspect", {{"model_id", "m0000"}, {"name", "存在しない"}, {"verdict", "accept"}}, 404)["error"]["reason"],
            "unknown_morph");
  EXPECT_EQ(post("/groups/" + pct(top_group()) + "/annotate", {{"target", 99}}, 400)["error"]["reason"], "bad_request");
  EXPECT_EQ(get("/no/such/route", 404)["error"]["reason"], "not_found");
}

TEST_F(ServiceTest, ParallelMutationsSerializeAndReplay) {
  // annotate every unfiltered group, then hammer inspections from 8 clients
  const auto groups = get("/groups");
  for (const auto& g : groups["groups"]) {
    if (g["filtered"].get<bool>()) continue;
    post("/groups/" + pct(g["name"].get<std::string>()) + "/annotate", {{"target", static_cast<int>(g["count"].get<int>() % 23)}});
  }
  std::vector<std::pair<std::string, std::string>> keys;
  const auto snap = svc_->snapshot();
  for (const auto& [k, r] : snap.records()) keys.emplace_back(k.model_id, k.name);
  ASSERT_GT(keys.size(), 40u);

  std::vector<std::thread> pool;
  std::atomic<int> ok{0}, conflict{0};
  std::mutex vmu;
  std::vector<std::uint64_t> versions;
  for (int t = 0; t < 8; ++t) {
    pool.emplace_back([&, t] {
      httplib::Client c("127.0.0.1", port_);
      // every key is attempted by two threads; exactly one may win
      for (std::size_t i = t % 4; i < keys.size(); i += 4) {
        const json body = {{"model_id", keys[i].first}, {"name", keys[i].second}, {"verdict", (i + t) % 3 ? "accept" : "reject"}};
        auto res = c.Post("/inspect", body.dump(), "application/json");
        if (!res) continue;
        if (res->status == 200) {
          ++ok;
          std::lock_guard l(vmu);
          versions.push_back(json::parse(res->body)["version"].get<std::uint64_t>());
        } else if (res->status == 409) {
          ++conflict;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  EXPECT_EQ(ok.load(), static_cast<int>(keys.size()));
  EXPECT_EQ(conflict.load(), static_cast<int>(keys.size()));
  std::set<std::uint64_t> unique(versions.begin(), versions.end());
  EXPECT_EQ(unique.size(), versions.size());

  const auto live = svc_->snapshot();
  svc_->stop();
  const auto events = read_event_log(*dir_ / "catalog" / "annotations.jsonl");
  EXPECT_EQ(events.size(), live.version());
  const auto replayed = replay(MorphCatalog::load(*dir_ / "catalog", CatalogConfig{3}), events);
  EXPECT_EQ(replayed.snapshot_text(), live.snapshot_text());
  EXPECT_DOUBLE_EQ(replayed.stats().progress, live.stats().progress);
}

TEST_F(ServiceTest, RestartReplaysLog) {
  const auto name = top_group();
  post("/groups/" + pct(name) + "/annotate", {{"target", "eye/closed/both"}});
  const auto before = svc_->snapshot().snapshot_text();
  svc_.reset();
  ServiceConfig cfg;
  cfg.catalog_dir = *dir_ / "catalog";
  cfg.frequency_threshold = 3;
  AnnotationService again(cfg);
  EXPECT_EQ(again.snapshot().snapshot_text(), before);
}

TEST(ServiceStartup, DiagnosesMissingCatalogAndBusyPort) {
  ServiceConfig missing;
  missing.catalog_dir = "/nonexistent/catalog";
  EXPECT_THROW(AnnotationService{missing}, IoError);

  const auto dir = oracle::temp_dir("service_port");
  MorphCatalog(make_fixture_catalog(3, 1).models).save(dir);
  ServiceConfig cfg;
  cfg.catalog_dir = dir;
  AnnotationService first(cfg);
  const int port = first.start();
  ServiceConfig clash = cfg;
  clash.port = port;
  clash.event_log = dir / "other.jsonl";
  AnnotationService second(clash);
  EXPECT_THROW(second.start(), IoError);
  first.stop();

  write_text_file(dir / "catalog.jsonl", "{broken\n");
  EXPECT_THROW(AnnotationService{cfg}, IoError);
  std::filesystem::remove_all(dir);
}
