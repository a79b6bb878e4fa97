#pragma once

// Command-line front end. dispatch() never exits the process; it returns
// 0 on success, 2 for usage errors, 3 for I/O errors, 4 for numerical
// failures.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "toonpose/catalog.hpp"
#include "toonpose/catalog_fixture.hpp"
#include "toonpose/dataset.hpp"
#include "toonpose/metrics.hpp"
#include "toonpose/pose.hpp"
#include "toonpose/pose_mapping.hpp"
#include "toonpose/render.hpp"
#include "toonpose/sampler.hpp"
#include "toonpose/service.hpp"

namespace toonpose::cli {

inline constexpr const char* kOutDirEnv = "TOONPOSE_OUT_DIR";
inline constexpr const char* kJobsEnv = "TOONPOSE_JOBS";

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3, kNumerical = 4 };

// ---------------------------------------------------------------------------
// Pose files

/// Pose rows from CSV text. A leading non-numeric header line is skipped;
/// rows with more than 20 fields use their last 20 (so dataset exports
/// with id columns read back directly).
inline std::vector<PoseVector> parse_pose_csv(const std::string& text, const std::string& where) {
  std::vector<PoseVector> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() < static_cast<std::size_t>(kPoseDims)) {
      if (out.empty() && lineno == 1) continue;  // header
      throw IoError(where + ":" + std::to_string(lineno) + ": expected 20 values, found " + std::to_string(fields.size()));
    }
    std::vector<double> v;
    bool numeric = true;
    for (std::size_t i = fields.size() - kPoseDims; i < fields.size(); ++i) {
      char* end = nullptr;
      const double d = std::strtod(fields[i].c_str(), &end);
      if (end == fields[i].c_str() || *end != '\0') {
        numeric = false;
        break;
      }
      v.push_back(d);
    }
    if (!numeric) {
      if (out.empty()) continue;  // header
      throw IoError(where + ":" + std::to_string(lineno) + ": non-numeric pose value");
    }
    out.push_back(PoseVector::from_flat(v));
  }
  return out;
}

inline std::vector<PoseVector> read_pose_csv(const std::filesystem::path& path) {
  return parse_pose_csv(read_text_file(path), path.string());
}

inline std::string pose_csv_header() {
  std::string h;
  for (int i = 0; i < kPoseDims; ++i) h += (i ? "," : "") + slot_name(i);
  return h + "\n";
}

// ---------------------------------------------------------------------------
// Output helpers

struct Sink {
  std::ostream& out;
  std::string path;

  void write(const std::string& text) const {
    if (path.empty() || path == "-") {
      out << text;
      return;
    }
    write_text_file(path, text);
  }
};

inline std::filesystem::path default_out_dir(const std::string& fallback) {
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return fallback;
}

inline std::vector<int> parse_int_list(const std::string& s, const std::string& flag) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError(flag + ": '" + tok + "' is not an integer");
    }
  }
  return out;
}

inline MorphAvailability parse_morphs(const std::string& spec, std::uint64_t seed) {
  if (spec == "all") return MorphAvailability::all(seed);
  MorphAvailability a;
  a.seed = seed;
  if (spec == "none" || spec.empty()) return a;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    auto id = parse_target_key(tok);
    if (!id) throw UsageError("--morphs: unknown target morph '" + tok + "' (use keys such as eye/closed/left)");
    a.available.set(static_cast<std::size_t>(*id));
  }
  return a;
}

inline std::array<double, 3> angles_of(const std::vector<double>& row, const std::string& where) {
  if (row.size() == 3) return {row[0], row[1], row[2]};
  if (row.size() == static_cast<std::size_t>(kPoseDims)) return {row[17], row[18], row[19]};
  throw IoError(where + ": expected 3 angles or a 20-value pose");
}

inline std::vector<std::array<double, 3>> read_angle_rows(const std::filesystem::path& path) {
  std::vector<std::array<double, 3>> out;
  std::istringstream in(read_text_file(path));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    std::vector<double> row;
    try {
      row = parse_row(line, where);
    } catch (const IoError&) {
      if (out.empty()) continue;  // header
      throw;
    }
    out.push_back(angles_of(row, where));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config layering: defaults < config file < environment < flags.

inline nlohmann::json read_config_file(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  try {
    auto j = nlohmann::json::parse(read_text_file(path));
    if (!j.is_object()) throw IoError(path + ": config must be a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
}

template <class T>
T layered(const nlohmann::json& file, const char* key, const CLI::Option* flag, const T& flag_value, T value) {
  if (file.contains(key)) {
    try {
      value = file.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("config key '") + key + "': " + e.what());
    }
  }
  if (flag && flag->count() > 0) value = flag_value;
  return value;
}

// ---------------------------------------------------------------------------

inline std::atomic<bool>& stop_requested() {
  static std::atomic<bool> flag{false};
  return flag;
}

inline int run(CLI::App& app, const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

inline int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Animation-head pose toolkit: pose sampling, rendering, pose mapping, datasets, metrics, annotation"};
  app.name("toonpose");
  return run(app, args, out, err);
}

inline int dispatch(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, out, err);
}

inline int run(CLI::App& app, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  app.require_subcommand(1);
  app.fallthrough(false);

  // sample-poses ------------------------------------------------------------
  auto* sp = app.add_subcommand("sample-poses", "Sample pose vectors for one character");
  std::uint64_t sp_seed = 0;
  std::string sp_morphs = "all", sp_model = "c0000", sp_out;
  int sp_count = -1;
  bool sp_rotate = false, sp_paired = false;
  sp->add_option("--seed", sp_seed, "Global seed")->required();
  sp->add_option("--morphs", sp_morphs, "Available target morphs: all, none, or comma-separated keys");
  sp->add_option("--model-id", sp_model, "Model id used for the sampling substream");
  sp->add_option("--count", sp_count, "Number of draws (default: the sample-count policy)");
  sp->add_flag("--rotate", sp_rotate, "Sample head angles");
  sp->add_flag("--paired", sp_paired, "Emit frontal and rotated rows per draw, with group and draw columns");
  sp->add_option("-o,--out", sp_out, "Output CSV (default stdout)");

  // render ------------------------------------------------------------------
  auto* rd = app.add_subcommand("render", "Render posed characters to PNG");
  std::uint64_t rd_seed = 0;
  std::string rd_pose, rd_out, rd_model = "c0000", rd_landmarks, rd_job;
  int rd_shader = 1, rd_res = 256, rd_row = -1;
  rd->add_option("--seed", rd_seed, "Global seed (selects the character)")->required();
  rd->add_option("--model-id", rd_model, "Character model id");
  rd->add_option("--pose", rd_pose, "Pose CSV (default: neutral pose)");
  rd->add_option("--row", rd_row, "Render only this row of the pose file");
  rd->add_option("--shader", rd_shader, "Shader 1..4");
  rd->add_option("--resolution", rd_res, "256, 512 or 1024");
  rd->add_option("-o,--out", rd_out, "Output PNG, or a directory when rendering several rows")->required();
  rd->add_option("--landmarks", rd_landmarks, "Write projected landmarks (pixel coordinates) as JSON");
  rd->add_option("--job", rd_job, "Also write a render job description for an external renderer");

  // fit-basis ---------------------------------------------------------------
  auto* fb = app.add_subcommand("fit-basis", "Fit the 17x64 semantic coefficient matrix");
  double fb_lambda = kDefaultLambda;
  std::string fb_basis, fb_out;
  fb->add_option("--lambda", fb_lambda, "Ridge weight")->check(CLI::NonNegativeNumber);
  fb->add_option("--basis", fb_basis, "External 48x64 landmark basis (default: built-in)");
  fb->add_option("-o,--out", fb_out, "Output file")->required();

  // map-pose ----------------------------------------------------------------
  auto* mp = app.add_subcommand("map-pose", "Map pose vectors to 70-dim face-model parameters");
  std::string mp_phi, mp_pose, mp_out;
  mp->add_option("--phi", mp_phi, "Fitted coefficient matrix")->required();
  mp->add_option("--pose", mp_pose, "Pose CSV")->required();
  mp->add_option("-o,--out", mp_out, "Output (default stdout)");

  // interpolate -------------------------------------------------------------
  auto* ip = app.add_subcommand("interpolate", "Evenly spaced in-between poses, endpoints excluded");
  std::string ip_from, ip_to, ip_out;
  int ip_steps = 0;
  ip->add_option("--from", ip_from, "Start pose CSV (first row)")->required();
  ip->add_option("--to", ip_to, "End pose CSV (first row)")->required();
  ip->add_option("--steps", ip_steps, "Number of in-between poses")->required();
  ip->add_option("-o,--out", ip_out, "Output CSV (default stdout)");

  // build-dataset -----------------------------------------------------------
  auto* bd = app.add_subcommand("build-dataset", "Render a dataset and write its manifest");
  std::uint64_t bd_seed = 0;
  int bd_chars = 10, bd_res = 256, bd_jobs = 1;
  std::string bd_shaders = "1", bd_out, bd_catalog, bd_phi, bd_config;
  bool bd_mapping = false;
  auto* o_seed = bd->add_option("--seed", bd_seed, "Global seed");
  auto* o_chars = bd->add_option("--characters", bd_chars, "Synthetic characters");
  auto* o_shaders = bd->add_option("--shaders", bd_shaders, "Shader count (1..4) or comma-separated shader ids");
  auto* o_res = bd->add_option("--resolution", bd_res, "256, 512 or 1024");
  auto* o_out = bd->add_option("-o,--out-dir", bd_out, std::string("Output directory (env ") + kOutDirEnv + ")");
  auto* o_jobs = bd->add_option("-j,--jobs", bd_jobs, std::string("Worker threads (env ") + kJobsEnv + ")");
  auto* o_catalog = bd->add_option("--catalog", bd_catalog, "Annotated catalog directory (default: synthetic characters)");
  auto* o_mapping = bd->add_flag("--with-mapping", bd_mapping, "Store mapped 70-dim poses");
  auto* o_phi = bd->add_option("--phi", bd_phi, "Coefficient matrix for --with-mapping (default: fit built-in)");
  int bd_threshold = kDefaultFrequencyThreshold;
  auto* o_threshold = bd->add_option("--threshold", bd_threshold, "Catalog mode: frequency threshold used while annotating");
  bd->add_option("--config", bd_config, "JSON config file");

  // stats -------------------------------------------------------------------
  auto* st = app.add_subcommand("stats", "Summarize a manifest");
  std::string st_manifest, st_group, st_out;
  st->add_option("--manifest", st_manifest, "Manifest file")->required();
  st->add_option("--group", st_group, "Restrict to frontalized_expression or rotated_expression");
  st->add_option("-o,--out", st_out, "Output JSON (default stdout)");

  // split -------------------------------------------------------------------
  auto* sl = app.add_subcommand("split", "Split a manifest by model id");
  std::string sl_manifest, sl_out;
  double sl_frac = 0.0;
  std::uint64_t sl_seed = 0;
  sl->add_option("--manifest", sl_manifest, "Manifest file")->required();
  sl->add_option("--train-fraction", sl_frac, "Fraction of models in the train split")->required();
  sl->add_option("--seed", sl_seed, "Seed of the model ordering")->required();
  sl->add_option("-o,--out-dir", sl_out, "Directory for train.jsonl and test.jsonl");

  // ssim --------------------------------------------------------------------
  auto* ss = app.add_subcommand("ssim", "Structural similarity between images");
  std::string ss_a, ss_b, ss_pairs, ss_out;
  SsimConfig ss_cfg;
  ss->add_option("--a", ss_a, "First PNG");
  ss->add_option("--b", ss_b, "Second PNG");
  ss->add_option("--pairs", ss_pairs, "File of tab-separated PNG path pairs");
  ss->add_option("--window", ss_cfg.window, "Gaussian window size");
  ss->add_option("--sigma", ss_cfg.sigma, "Gaussian window sigma");
  ss->add_option("-o,--out", ss_out, "Output JSON (default stdout)");

  // hae ---------------------------------------------------------------------
  auto* ha = app.add_subcommand("hae", "Head angle error in degrees");
  std::string ha_pred, ha_target, ha_out;
  ha->add_option("--predicted", ha_pred, "CSV rows of yaw,pitch,roll or full pose vectors")->required();
  ha->add_option("--target", ha_target, "CSV rows of yaw,pitch,roll or full pose vectors")->required();
  ha->add_option("-o,--out", ha_out, "Output JSON (default stdout)");

  // annotate-serve ----------------------------------------------------------
  auto* as = app.add_subcommand("annotate-serve", "Serve the annotation HTTP API over a catalog");
  ServiceConfig as_cfg;
  std::string as_catalog, as_log;
  double as_seconds = 0.0;
  as->add_option("--catalog", as_catalog, "Catalog directory")->required();
  as->add_option("--event-log", as_log, "Event log (default <catalog>/annotations.jsonl)");
  as->add_option("--host", as_cfg.host, "Bind address");
  as->add_option("--port", as_cfg.port, "Port (0 picks a free one)");
  as->add_option("--threshold", as_cfg.frequency_threshold, "Minimum models per morph name");
  as->add_option("--annotator", as_cfg.annotator, "Annotator name recorded in events");
  as->add_option("--max-seconds", as_seconds, "Stop after this many seconds (0: until interrupted)");

  // fixture-catalog ---------------------------------------------------------
  auto* fc = app.add_subcommand("fixture-catalog", "Write a synthetic source-morph catalog with previews");
  std::uint64_t fc_seed = 0;
  int fc_models = 10, fc_res = 256;
  std::string fc_out;
  bool fc_annotate = false;
  fc->add_option("--seed", fc_seed, "Global seed")->required();
  fc->add_option("--models", fc_models, "Number of models");
  fc->add_option("--resolution", fc_res, "Preview resolution");
  fc->add_option("-o,--out-dir", fc_out, "Catalog directory")->required();
  fc->add_flag("--annotate", fc_annotate, "Also write a fully annotated event log from the ground truth");

  if (!args.empty() && !args[0].empty() && args[0][0] != '-') {
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == args[0];
    if (!known) {
      err << "toonpose: unknown subcommand '" << args[0] << "'\nrun 'toonpose --help' for the list of subcommands\n";
      return kUsage;
    }
  }

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "toonpose: " << e.what() << "\n";
    if (app.get_subcommands().empty()) err << "run 'toonpose --help' for the list of subcommands\n";
    return kUsage;
  }

  try {
    if (sp->parsed()) {
      const auto avail = parse_morphs(sp_morphs, substream_seed(sp_model, sp_seed));
      const int n = sp_count >= 0 ? sp_count : sample_count(avail.count());
      std::string text;
      if (sp_paired) {
        text = "draw_index,group," + pose_csv_header();
        for (int i = 0; i < n; ++i)
          for (bool rot : {false, true})
            text += std::to_string(i) + "," +
                    std::string(group_name(rot ? PoseGroup::rotated_expression : PoseGroup::frontalized_expression)) +
                    "," + format_pose(sample_pose(avail, rot, static_cast<std::uint64_t>(i))) + "\n";
      } else {
        text = pose_csv_header();
        for (int i = 0; i < n; ++i) text += format_pose(sample_pose(avail, sp_rotate, static_cast<std::uint64_t>(i))) + "\n";
      }
      Sink{out, sp_out}.write(text);
      return kOk;
    }

    if (rd->parsed()) {
      const auto ch = synthetic_character(rd_model, rd_seed).desc;
      std::vector<PoseVector> poses = rd_pose.empty() ? std::vector<PoseVector>{PoseVector{}} : read_pose_csv(rd_pose);
      if (poses.empty()) throw IoError(rd_pose + ": no pose rows");
      if (rd_row >= 0) {
        if (rd_row >= static_cast<int>(poses.size())) throw UsageError("--row " + std::to_string(rd_row) + " is past the end of " + rd_pose);
        poses = {poses[static_cast<std::size_t>(rd_row)]};
      }
      nlohmann::json lms = nlohmann::json::array();
      nlohmann::json jobs = nlohmann::json::array();
      const bool many = poses.size() > 1;
      if (many) std::filesystem::create_directories(rd_out);
      for (std::size_t i = 0; i < poses.size(); ++i) {
        const auto frame = render(ch, poses[i], rd_shader, rd_res);
        char name[32];
        std::snprintf(name, sizeof name, "%04zu.png", i);
        const std::filesystem::path path = many ? std::filesystem::path(rd_out) / name : std::filesystem::path(rd_out);
        write_png(path, frame.rgba);
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& l : frame.landmarks_px) pts.push_back({l.x, l.y});
        lms.push_back({{"image", path.string()}, {"pixel_hash", hex64(pixel_hash(frame.rgba))}, {"landmarks", pts}});
        jobs.push_back(render_job(rd_model, poses[i], rd_shader, rd_res, rd_seed));
      }
      if (!rd_landmarks.empty()) write_text_file(rd_landmarks, lms.dump(2) + "\n");
      if (!rd_job.empty()) write_text_file(rd_job, jobs.dump(2) + "\n");
      out << lms.size() << " image(s) written\n";
      return kOk;
    }

    if (fb->parsed()) {
      LandmarkModel model = default_landmark_model(fb_lambda);
      if (!fb_basis.empty()) model.basis = read_basis(fb_basis);
      const auto fitted = build_phi(model, default_rules());
      write_phi(fb_out, fitted);
      out << "phi hash " << hex64(phi_hash(fitted)) << "\n";
      return kOk;
    }

    if (mp->parsed()) {
      const auto fitted = read_phi(mp_phi);
      std::string text;
      for (const auto& p : read_pose_csv(mp_pose)) text += format_row(map_pose(p, fitted).m) + "\n";
      Sink{out, mp_out}.write(text);
      return kOk;
    }

    if (ip->parsed()) {
      const auto a = read_pose_csv(ip_from), b = read_pose_csv(ip_to);
      if (a.empty()) throw IoError(ip_from + ": no pose rows");
      if (b.empty()) throw IoError(ip_to + ": no pose rows");
      std::string text = pose_csv_header();
      for (const auto& p : interpolation_path(a.front(), b.front(), ip_steps)) text += format_pose(p) + "\n";
      Sink{out, ip_out}.write(text);
      return kOk;
    }

    if (bd->parsed()) {
      const auto file = read_config_file(bd_config);
      DatasetConfig cfg;
      // seed
      bool have_seed = file.contains("seed");
      if (have_seed) cfg.seed = file.at("seed").get<std::uint64_t>();
      if (o_seed->count()) cfg.seed = bd_seed, have_seed = true;
      if (!have_seed) throw UsageError("--seed is required (flag or config file key 'seed')");
      cfg.characters = layered<int>(file, "characters", o_chars, bd_chars, 10);
      cfg.resolution = layered<int>(file, "resolution", o_res, bd_res, 256);
      cfg.with_mapping = layered<bool>(file, "with_mapping", o_mapping, bd_mapping, false);
      std::string shaders = "1";
      bool explicit_list = false;  // a config array is always a list of ids
      if (file.contains("shaders")) {
        const auto& s = file.at("shaders");
        explicit_list = s.is_array();
        shaders = s.is_array() ? [&] {
          std::string joined;
          for (const auto& v : s) joined += (joined.empty() ? "" : ",") + std::to_string(v.get<int>());
          return joined;
        }() : s.dump();
      }
      if (o_shaders->count()) shaders = bd_shaders, explicit_list = false;
      auto list = parse_int_list(shaders, "--shaders");
      if (!explicit_list && list.size() == 1 && shaders.find(',') == std::string::npos) {
        // a single number is a shader count
        if (list[0] < 1 || list[0] > kShaderCount) throw UsageError("--shaders must be 1..4 or a list of shader ids");
        const int n = list[0];
        list.clear();
        for (int s = 1; s <= n; ++s) list.push_back(s);
      }
      cfg.shaders = list;
      std::string out_dir = default_out_dir("dataset").string();
      if (file.contains("out_dir")) out_dir = file.at("out_dir").get<std::string>();
      if (const char* env = std::getenv(kOutDirEnv); env && *env) out_dir = env;
      if (o_out->count()) out_dir = bd_out;
      cfg.output_dir = out_dir;
      int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
      if (file.contains("jobs")) jobs = file.at("jobs").get<int>();
      if (const char* env = std::getenv(kJobsEnv); env && *env) jobs = parse_int_list(env, kJobsEnv).at(0);
      if (o_jobs->count()) jobs = bd_jobs;
      cfg.jobs = jobs;
      std::string catalog = file.value("catalog", std::string());
      if (o_catalog->count()) catalog = bd_catalog;
      cfg.catalog_dir = catalog;
      cfg.frequency_threshold = layered<int>(file, "threshold", o_threshold, bd_threshold, kDefaultFrequencyThreshold);
      std::string phi = file.value("phi", std::string());
      if (o_phi->count()) phi = bd_phi;
      cfg.phi_path = phi;
      // content-affecting settings only: output location and thread count
      // do not change the manifest
      cfg.effective_config = {{"seed", cfg.seed},
                              {"characters", cfg.catalog_dir.empty() ? cfg.characters : 0},
                              {"shaders", cfg.shaders},
                              {"resolution", cfg.resolution},
                              {"catalog", catalog.empty() ? "" : std::filesystem::path(catalog).filename().string()},
                              {"threshold", catalog.empty() ? 0 : cfg.frequency_threshold},
                              {"with_mapping", cfg.with_mapping},
                              {"phi", phi.empty() ? "" : std::filesystem::path(phi).filename().string()}};
      const auto m = build_dataset(cfg);
      write_text_file(cfg.output_dir / "poses.csv", pose_csv(m));
      out << m.records.size() << " records, manifest " << hex64(fnv1a(manifest_text(m))) << " -> "
          << (cfg.output_dir / "manifest.jsonl").string() << "\n";
      return kOk;
    }

    if (st->parsed()) {
      std::optional<PoseGroup> g;
      if (!st_group.empty()) {
        g = parse_group(st_group);
        if (!g) throw UsageError("--group must be frontalized_expression or rotated_expression");
      }
      Sink{out, st_out}.write(stats_to_json(dataset_stats(read_manifest(st_manifest), g)).dump(2) + "\n");
      return kOk;
    }

    if (sl->parsed()) {
      const auto m = read_manifest(sl_manifest);
      const auto [train, test] = split_manifest(m, sl_frac, sl_seed);
      const std::filesystem::path dir = sl_out.empty() ? std::filesystem::path(sl_manifest).parent_path() : std::filesystem::path(sl_out);
      if (!dir.empty()) std::filesystem::create_directories(dir);
      write_manifest(dir / "train.jsonl", train);
      write_manifest(dir / "test.jsonl", test);
      auto models = [](const Manifest& x) {
        std::set<std::string> ids;
        for (const auto& r : x.records) ids.insert(r.model_id);
        return ids.size();
      };
      out << "train " << models(train) << " models, test " << models(test) << " models\n";
      return kOk;
    }

    if (ss->parsed()) {
      std::vector<std::pair<std::string, std::string>> pairs;
      if (!ss_a.empty() || !ss_b.empty()) {
        if (ss_a.empty() || ss_b.empty()) throw UsageError("--a and --b must be given together");
        pairs.emplace_back(ss_a, ss_b);
      }
      if (!ss_pairs.empty()) {
        std::istringstream in(read_text_file(ss_pairs));
        std::string line;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          const auto tab = line.find('\t');
          if (tab == std::string::npos) throw IoError(ss_pairs + ": expected two tab-separated paths per line");
          pairs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
        }
      }
      if (pairs.empty()) throw UsageError("give --a/--b or --pairs");
      nlohmann::json rows = nlohmann::json::array();
      double total = 0.0;
      for (const auto& [a, b] : pairs) {
        const double v = ssim(read_png(a), read_png(b), ss_cfg);
        rows.push_back({{"a", a}, {"b", b}, {"ssim", v}});
        total += v;
      }
      Sink{out, ss_out}.write(nlohmann::json{{"pairs", rows}, {"mean_ssim", total / static_cast<double>(pairs.size())}}.dump(2) + "\n");
      return kOk;
    }

    if (ha->parsed()) {
      const auto p = read_angle_rows(ha_pred), t = read_angle_rows(ha_target);
      if (p.size() != t.size())
        throw UsageError("--predicted has " + std::to_string(p.size()) + " rows but --target has " + std::to_string(t.size()));
      if (p.empty()) throw IoError(ha_pred + ": no rows");
      nlohmann::json rows = nlohmann::json::array();
      double total = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double e = head_angle_error(p[i], t[i]);
        rows.push_back(e);
        total += e;
      }
      Sink{out, ha_out}.write(nlohmann::json{{"hae", rows}, {"mean_hae", total / static_cast<double>(p.size())}}.dump(2) + "\n");
      return kOk;
    }

    if (as->parsed()) {
      as_cfg.catalog_dir = as_catalog;
      as_cfg.event_log = as_log;
      AnnotationService service(as_cfg);
      const int port = service.start();
      out << "annotation service on http://" << as_cfg.host << ":" << port << "\n" << std::flush;
      stop_requested() = false;
      std::signal(SIGINT, [](int) { stop_requested() = true; });
      std::signal(SIGTERM, [](int) { stop_requested() = true; });
      const auto t0 = std::chrono::steady_clock::now();
      while (!stop_requested()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        if (as_seconds > 0 && std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= as_seconds) break;
      }
      service.stop();
      out << "stopped at version " << service.version() << "\n";
      return kOk;
    }

    if (fc->parsed()) {
      const int threshold = scaled_threshold(fc_models);
      auto fx = write_fixture_catalog(fc_out, make_fixture_catalog(fc_models, fc_seed), fc_res);
      if (fc_annotate) {
        MorphCatalog cat(fx.models, CatalogConfig{threshold});
        simulate_annotator(cat, fx);
        std::string text;
        for (const auto& e : cat.events()) text += event_line(e);
        write_text_file(std::filesystem::path(fc_out) / "annotations.jsonl", text);
      }
      out << fx.models.size() << " models written to " << fc_out << " (suggested --threshold " << threshold << ")\n";
      return kOk;
    }
  } catch (const UsageError& e) {
    err << "toonpose: " << e.what() << "\n";
    return kUsage;
  } catch (const AnnotationError& e) {
    err << "toonpose: " << e.what() << " (" << e.reason() << ")\n";
    return kUsage;
  } catch (const IoError& e) {
    err << "toonpose: " << e.what() << "\n";
    return kIo;
  } catch (const NumericalError& e) {
    err << "toonpose: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "toonpose: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    err << "toonpose: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace toonpose::cli
