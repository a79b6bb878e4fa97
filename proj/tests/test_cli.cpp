#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "oracles.hpp"
#include "toonpose/cli.hpp"

using namespace toonpose;
using namespace toonpose::cli;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::vector<double>> rows(const std::string& text) {
  std::vector<std::vector<double>> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(parse_row(line, "out"));
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = oracle::temp_dir(std::string("cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    unsetenv(kOutDirEnv);
    unsetenv(kJobsEnv);
  }
  void TearDown() override {
    unsetenv(kOutDirEnv);
    unsetenv(kJobsEnv);
    std::filesystem::remove_all(dir_);
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::filesystem::path dir_;
};

}  // namespace

TEST_F(CliTest, UsageErrorsExitTwo) {
  auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find("unknown subcommand 'frobnicate'"), std::string::npos);
  r = run({});
  EXPECT_EQ(r.code, kUsage);
  r = run({"sample-poses"});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find("--seed"), std::string::npos);
  EXPECT_EQ(run({"render", "--seed", "1", "-o", path("x.png"), "--shader", "9"}).code, kUsage);
  EXPECT_EQ(run({"build-dataset", "-o", path("d")}).code, kUsage);
  EXPECT_EQ(run({"--help"}).code, kOk);
}

TEST_F(CliTest, MissingFilesExitThree) {
  auto r = run({"map-pose", "--phi", path("nope.txt"), "--pose", path("nope.csv")});
  EXPECT_EQ(r.code, kIo);
  EXPECT_NE(r.err.find("nope.txt"), std::string::npos);
  EXPECT_EQ(run({"stats", "--manifest", path("missing.jsonl")}).code, kIo);
}

TEST_F(CliTest, IllConditionedFitExitsFour) {
  std::string basis;
  for (int r = 0; r < kLandmarkCoords; ++r) {
    std::vector<double> row(kExpressionCoefficients, 0.0);
    row[0] = row[1] = 1.0;  // rank one
    basis += format_row(row) + "\n";
  }
  write_text_file(path("basis.txt"), basis);
  EXPECT_EQ(run({"fit-basis", "--basis", path("basis.txt"), "--lambda", "1e-14", "-o", path("phi.txt")}).code, kNumerical);
}

TEST_F(CliTest, MapPoseZeroIsSeventyZeros) {
  ASSERT_EQ(run({"fit-basis", "-o", path("phi.txt")}).code, kOk);
  std::string csv = cli::pose_csv_header() + format_pose(PoseVector{}) + "\n" + format_pose(PoseVector::unit_slot(4)) + "\n";
  write_text_file(path("poses.csv"), csv);
  const auto r = run({"map-pose", "--phi", path("phi.txt"), "--pose", path("poses.csv")});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto out = rows(r.out);
  ASSERT_EQ(out.size(), 2u);
  ASSERT_EQ(out[0].size(), 70u);
  for (double v : out[0]) EXPECT_EQ(v, 0.0);
  const auto fb = read_phi(path("phi.txt"));
  for (int j = 0; j < kExpressionCoefficients; ++j) EXPECT_EQ(out[1][j], fb.phi(4, j));
}

TEST_F(CliTest, InterpolateFiveSteps) {
  PoseVector a, b;
  b.expr[12] = 1.0;
  b.angles_deg = {12, -6, 18};
  write_text_file(path("a.csv"), cli::pose_csv_header() + format_pose(a) + "\n");
  write_text_file(path("b.csv"), cli::pose_csv_header() + format_pose(b) + "\n");
  const auto r = run({"interpolate", "--from", path("a.csv"), "--to", path("b.csv"), "--steps", "5"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto poses = cli::parse_pose_csv(r.out, "out");
  ASSERT_EQ(poses.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    const double t = (i + 1) / 6.0;
    EXPECT_NEAR(poses[i].expr[12], t, 1e-15);
    EXPECT_NEAR(poses[i].angles_deg[0], 12 * t, 1e-13);
  }
  EXPECT_EQ(run({"interpolate", "--from", path("a.csv"), "--to", path("b.csv"), "--steps", "0"}).code, kUsage);
}

TEST_F(CliTest, SamplePosesAndRender) {
  auto r = run({"sample-poses", "--seed", "3", "--morphs", "mouth/A,eye/closed/both", "--count", "4", "--rotate", "-o", path("p.csv")});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto poses = read_pose_csv(path("p.csv"));
  ASSERT_EQ(poses.size(), 4u);
  for (const auto& p : poses) EXPECT_TRUE(validate(p).empty());
  r = run({"render", "--seed", "3", "--pose", path("p.csv"), "--row", "2", "-o", path("one.png"), "--landmarks", path("lm.json")});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_EQ(read_png(path("one.png")).width, 256);
  EXPECT_EQ(nlohmann::json::parse(read_text_file(path("lm.json")))[0]["landmarks"].size(), static_cast<std::size_t>(kLandmarkCount));
  EXPECT_EQ(run({"sample-poses", "--seed", "3", "--morphs", "mouth/Z"}).code, kUsage);
}

TEST_F(CliTest, BuildDatasetTwiceIsIdentical) {
  for (const char* d : {"a", "b"}) {
    const auto r = run({"build-dataset", "--seed", "11", "--characters", "1", "--shaders", "1", "-o", path(d), "-j", "2"});
    ASSERT_EQ(r.code, kOk) << r.err;
  }
  EXPECT_EQ(read_text_file(path("a/manifest.jsonl")), read_text_file(path("b/manifest.jsonl")));
  EXPECT_EQ(read_text_file(path("a/poses.csv")), read_text_file(path("b/poses.csv")));
  auto r = run({"stats", "--manifest", path("a/manifest.jsonl")});
  ASSERT_EQ(r.code, kOk);
  EXPECT_EQ(nlohmann::json::parse(r.out)["models"], 1);
  r = run({"split", "--manifest", path("a/manifest.jsonl"), "--train-fraction", "1.5", "--seed", "1"});
  EXPECT_EQ(r.code, kUsage);
}

TEST_F(CliTest, ConfigFileEnvAndFlagPrecedence) {
  write_text_file(path("cfg.json"), R"({"seed": 5, "characters": 1, "shaders": [2], "out_dir": ")" + path("from_file") + "\"}");
  auto r = run({"build-dataset", "--config", path("cfg.json")});
  ASSERT_EQ(r.code, kOk) << r.err;
  auto m = read_manifest(path("from_file/manifest.jsonl"));
  EXPECT_EQ(m.header.seed, 5u);
  EXPECT_EQ(m.header.shaders, std::vector<int>{2});

  setenv(kOutDirEnv, path("from_env").c_str(), 1);
  r = run({"build-dataset", "--config", path("cfg.json"), "--seed", "6"});
  ASSERT_EQ(r.code, kOk) << r.err;
  m = read_manifest(path("from_env/manifest.jsonl"));
  EXPECT_EQ(m.header.seed, 6u);

  r = run({"build-dataset", "--config", path("cfg.json"), "-o", path("from_flag")});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_TRUE(std::filesystem::exists(path("from_flag/manifest.jsonl")));
  // output location does not leak into the manifest
  EXPECT_EQ(read_text_file(path("from_flag/manifest.jsonl")), read_text_file(path("from_file/manifest.jsonl")));

  write_text_file(path("bad.json"), "[1,2]");
  EXPECT_EQ(run({"build-dataset", "--config", path("bad.json")}).code, kIo);
}

TEST_F(CliTest, MetricsCommands) {
  const auto img = render(CharacterDescriptor::canonical(), PoseVector{}, 1, 256).rgba;
  write_png(path("a.png"), img);
  auto r = run({"ssim", "--a", path("a.png"), "--b", path("a.png")});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["mean_ssim"].get<double>(), 1.0);
  write_text_file(path("p.csv"), "yaw,pitch,roll\n10,0,0\n1,2,3\n");
  write_text_file(path("t.csv"), "yaw,pitch,roll\n0,0,0\n1,2,3\n");
  r = run({"hae", "--predicted", path("p.csv"), "--target", path("t.csv")});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_DOUBLE_EQ(j["hae"][0].get<double>(), 10.0 / 3.0);
  EXPECT_EQ(j["hae"][1].get<double>(), 0.0);
  write_text_file(path("t2.csv"), "0,0,0\n");
  EXPECT_EQ(run({"hae", "--predicted", path("p.csv"), "--target", path("t2.csv")}).code, kUsage);
}

TEST_F(CliTest, FixtureCatalogFeedsDatasetBuild) {
  auto r = run({"fixture-catalog", "--seed", "2", "--models", "4", "-o", path("cat"), "--annotate"});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto threshold = std::to_string(scaled_threshold(4));
  r = run({"build-dataset", "--seed", "1", "--catalog", path("cat"), "--threshold", threshold, "-o", path("ds")});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto m = read_manifest(path("ds/manifest.jsonl"));
  std::set<std::string> ids;
  for (const auto& rec : m.records) ids.insert(rec.model_id);
  EXPECT_EQ(ids.size(), 4u);
  EXPECT_TRUE(verify_manifest(m, path("ds")).empty());
}
