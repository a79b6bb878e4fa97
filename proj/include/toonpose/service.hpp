#pragma once

// HTTP facade over a morph catalog for the annotation UI.
//
// Reads run concurrently under a shared lock; every mutation is validated,
// appended to the event log in one write and applied under the exclusive
// lock, so the log never interleaves partial mutations.

#include <sys/socket.h>

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <thread>

#include "httplib.h"
// <resolv.h> (pulled in by httplib) defines _res, which collides with Eigen
#ifdef _res
#undef _res
#endif
#include "json.hpp"
#include "toonpose/catalog.hpp"
#include "toonpose/errors.hpp"

namespace toonpose {

struct ServiceConfig {
  std::filesystem::path catalog_dir;
  std::filesystem::path event_log;  // default: <catalog_dir>/annotations.jsonl
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  int frequency_threshold = kDefaultFrequencyThreshold;
  std::string annotator = "annotator";
  int threads = 8;
};

namespace detail {

inline int status_for(const std::string& reason) {
  if (reason == "unknown_group" || reason == "unknown_model" || reason == "unknown_morph") return 404;
  if (reason == "already_inspected" || reason == "not_annotated") return 409;
  if (reason == "filtered_group") return 422;
  return 400;
}

inline void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

inline void send_error(httplib::Response& res, int status, const std::string& reason, const std::string& message) {
  send_json(res, {{"error", {{"reason", reason}, {"message", message}}}}, status);
}

inline nlohmann::json record_json(const AnnotationRecord* r) {
  if (!r) return nullptr;
  nlohmann::json j = event_to_json(*r);
  if (r->target != kRejected) j["target_label"] = target_label(target_morph(r->target));
  return j;
}

inline std::string image_url(const std::string& rel) {
  // catalog paths are relative to the catalog directory: images/<...>
  return rel.empty() ? std::string() : "/" + rel;
}

inline int parse_target(const nlohmann::json& t) {
  if (t.is_number_integer()) return target_morph(t.get<int>()).id;
  if (t.is_string()) {
    if (auto id = parse_target_key(t.get<std::string>())) return *id;
    throw UsageError("unknown target '" + t.get<std::string>() + "'");
  }
  throw UsageError("target must be an id or a key such as mouth/A");
}

}  // namespace detail

class AnnotationService {
 public:
  explicit AnnotationService(ServiceConfig cfg) : cfg_(std::move(cfg)), catalog_(load(cfg_)) {
    if (cfg_.event_log.empty()) cfg_.event_log = cfg_.catalog_dir / "annotations.jsonl";
    catalog_ = replay(std::move(catalog_), read_event_log(cfg_.event_log));
    log_ = std::make_unique<EventLogWriter>(cfg_.event_log);
    routes();
  }

  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;
  ~AnnotationService() { stop(); }

  /// Binds and starts serving on a background thread; returns the port.
  int start() {
    if (running_) return port_;
    // exclusive bind so a busy port is reported instead of shared
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    if (cfg_.port == 0) {
      port_ = server_.bind_to_any_port(cfg_.host);
      if (port_ < 0) throw IoError("cannot bind " + cfg_.host);
    } else {
      if (!server_.bind_to_port(cfg_.host, cfg_.port))
        throw IoError("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port) + " (port busy?)");
      port_ = cfg_.port;
    }
    running_ = true;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Stops accepting requests and flushes the event log.
  void stop() {
    if (!running_) return;
    server_.stop();
    if (thread_.joinable()) thread_.join();
    running_ = false;
    std::unique_lock lock(mu_);
    log_->flush();
  }

  /// Blocks until stop() is called from another thread.
  void wait() {
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  bool running() const { return running_; }
  const ServiceConfig& config() const { return cfg_; }

  MorphCatalog snapshot() const {
    std::shared_lock lock(mu_);
    return catalog_;
  }

  std::uint64_t version() const {
    std::shared_lock lock(mu_);
    return catalog_.version();
  }

 private:
  static MorphCatalog load(const ServiceConfig& cfg) {
    if (!std::filesystem::is_directory(cfg.catalog_dir))
      throw IoError("catalog directory not found: " + cfg.catalog_dir.string());
    return MorphCatalog::load(cfg.catalog_dir, CatalogConfig{cfg.frequency_threshold});
  }

  template <class F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const AnnotationError& e) {
        detail::send_error(res, detail::status_for(e.reason()), e.reason(), e.what());
      } catch (const nlohmann::json::exception& e) {
        detail::send_error(res, 400, "bad_request", e.what());
      } catch (const UsageError& e) {
        detail::send_error(res, 400, "bad_request", e.what());
      } catch (const IoError& e) {
        detail::send_error(res, 500, "io_error", e.what());
      }
    };
  }

  void routes() {
    server_.set_mount_point("/images", (cfg_.catalog_dir / "images").string());
    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) detail::send_error(res, res.status, res.status == 404 ? "not_found" : "error", "no such resource");
    });
    server_.new_task_queue = [n = cfg_.threads] { return new httplib::ThreadPool(static_cast<std::size_t>(n)); };

    server_.Get("/stats", guarded([this](const httplib::Request&, httplib::Response& res) {
      std::shared_lock lock(mu_);
      const auto s = catalog_.stats();
      nlohmann::json counts = nlohmann::json::object();
      for (const auto& [id, n] : s.target_morph_counts) counts[id] = n;
      detail::send_json(res, {{"version", catalog_.version()},
                              {"model_count", s.model_count},
                              {"unique_morph_names", s.unique_morph_names},
                              {"completed_models", s.completed_models},
                              {"progress", s.progress},
                              {"frequency_threshold", catalog_.config().frequency_threshold},
                              {"target_morph_counts", counts}});
    }));

    server_.Get("/targets", guarded([](const httplib::Request&, httplib::Response& res) {
      nlohmann::json out = nlohmann::json::array();
      for (const auto& m : kTargetMorphs) out.push_back({{"id", m.id}, {"key", target_key(m)}, {"label", target_label(m)}});
      detail::send_json(res, {{"targets", out}});
    }));

    server_.Get("/groups", guarded([this](const httplib::Request& req, httplib::Response& res) {
      int min_count = 0;
      if (req.has_param("min_count")) {
        try {
          min_count = std::stoi(req.get_param_value("min_count"));
        } catch (const std::exception&) {
          throw UsageError("min_count must be an integer");
        }
      }
      std::shared_lock lock(mu_);
      nlohmann::json groups = nlohmann::json::array();
      for (const auto& g : catalog_.group_candidates()) {
        if (g.count < min_count) continue;
        groups.push_back({{"name", g.name}, {"count", g.count}, {"filtered", g.filtered}});
      }
      detail::send_json(res, {{"version", catalog_.version()},
                              {"frequency_threshold", catalog_.config().frequency_threshold},
                              {"groups", groups}});
    }));

    server_.Get(R"(/groups/([^/]+)/samples)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string name = nfc(req.matches[1].str());
      std::shared_lock lock(mu_);
      const auto members = catalog_.group_members(name);
      if (members.empty()) throw AnnotationError("unknown_group", "no source morph named '" + name + "'");
      nlohmann::json samples = nlohmann::json::array();
      for (const auto& key : members) {
        const auto* morph = catalog_.find_morph(key);
        auto it = catalog_.records().find(key);
        samples.push_back({{"model_id", key.model_id},
                           {"neutral", detail::image_url(catalog_.model(key.model_id).neutral_image)},
                           {"morph", detail::image_url(morph->preview_image)},
                           {"record", detail::record_json(it == catalog_.records().end() ? nullptr : &it->second)}});
      }
      detail::send_json(res, {{"version", catalog_.version()},
                              {"name", name},
                              {"count", static_cast<int>(members.size())},
                              {"filtered", catalog_.is_filtered(name)},
                              {"samples", samples}});
    }));

    server_.Post(R"(/groups/([^/]+)/annotate)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string name = nfc(req.matches[1].str());
      const auto body = nlohmann::json::parse(req.body);
      const int target = detail::parse_target(body.at("target"));
      const std::string annotator = body.value("annotator", cfg_.annotator);
      std::unique_lock lock(mu_);
      const auto events = catalog_.plan_group_annotation(name, target, annotator, utc_now_iso8601());
      commit(events);
      detail::send_json(res, {{"version", catalog_.version()}, {"created", events.size()}});
    }));

    server_.Get(R"(/models/([^/]+)/morphs)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1].str();
      std::shared_lock lock(mu_);
      const auto& model = catalog_.model(id);
      nlohmann::json morphs = nlohmann::json::array();
      for (const auto& m : model.morphs) {
        auto it = catalog_.records().find({id, m.name});
        morphs.push_back({{"name", m.name},
                          {"preview", detail::image_url(m.preview_image)},
                          {"count", catalog_.occurrence_count(m.name)},
                          {"record", detail::record_json(it == catalog_.records().end() ? nullptr : &it->second)}});
      }
      detail::send_json(res, {{"version", catalog_.version()},
                              {"model_id", id},
                              {"neutral", detail::image_url(model.neutral_image)},
                              {"complete", catalog_.model_complete(id)},
                              {"availability", catalog_.availability(id).ids()},
                              {"morphs", morphs}});
    }));

    server_.Post("/inspect", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = nlohmann::json::parse(req.body);
      const SourceKey key{body.at("model_id").get<std::string>(), body.at("name").get<std::string>()};
      const std::string v = body.at("verdict").get<std::string>();
      if (v != "accept" && v != "reject") throw UsageError("verdict must be accept or reject");
      const std::string annotator = body.value("annotator", cfg_.annotator);
      std::unique_lock lock(mu_);
      const auto e = catalog_.plan_inspection(key, v == "accept" ? Verdict::accept : Verdict::reject, annotator,
                                              utc_now_iso8601());
      commit({e});
      detail::send_json(res, {{"version", catalog_.version()}, {"record", detail::record_json(&e)}});
    }));

    server_.Get("/snapshot", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::shared_lock lock(mu_);
      const std::string format = req.has_param("format") ? req.get_param_value("format") : "json";
      if (format == "table") {
        res.set_header("X-Snapshot-Version", std::to_string(catalog_.version()));
        res.set_content(catalog_.mapping_table_text(), "text/tab-separated-values; charset=utf-8");
        return;
      }
      if (format == "tsv") {
        res.set_header("X-Snapshot-Version", std::to_string(catalog_.version()));
        res.set_content(catalog_.snapshot_text(), "text/tab-separated-values; charset=utf-8");
        return;
      }
      if (format != "json") throw UsageError("format must be json, tsv or table");
      nlohmann::json records = nlohmann::json::array();
      for (const auto& [key, r] : catalog_.records()) records.push_back(detail::record_json(&r));
      detail::send_json(res, {{"version", catalog_.version()},
                              {"records", records},
                              {"mapping_table", catalog_.mapping_table_text()}});
    }));
  }

  // Caller holds the exclusive lock. Events are already validated.
  void commit(const std::vector<AnnotationEvent>& events) {
    if (events.empty()) return;
    std::string block;
    for (const auto& e : events) block += event_line(e);
    log_->append_raw(block);
    for (const auto& e : events) catalog_.apply(e);
  }

  ServiceConfig cfg_;
  mutable std::shared_mutex mu_;
  MorphCatalog catalog_;
  std::unique_ptr<EventLogWriter> log_;
  httplib::Server server_;
  std::thread thread_;
  std::atomic<bool> running_{false};
  int port_ = -1;
};

}  // namespace toonpose
