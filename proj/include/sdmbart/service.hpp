#pragma once

// Job-oriented HTTP API over the pipeline. Each job lives in
// <workspace>/<id>/ with job.json (state), inputs/ (uploads) and results/
// (the pipeline export, served read-only once the job is done).

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "sdmbart/ascii_grid.hpp"
#include "sdmbart/error.hpp"
#include "sdmbart/pipeline/config.hpp"
#include "sdmbart/pipeline/export.hpp"
#include "sdmbart/pipeline/pipeline.hpp"
#include "sdmbart/pipeline/validate.hpp"

namespace sdm::service {

enum class JobState { pending, running, done, failed };

inline std::string to_string(JobState s) {
  switch (s) {
    case JobState::pending: return "pending";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "failed";
}

inline std::optional<JobState> job_state_from_string(const std::string& s) {
  for (auto st : {JobState::pending, JobState::running, JobState::done, JobState::failed}) {
    if (to_string(st) == s) return st;
  }
  return std::nullopt;
}

struct Job {
  std::string id;
  nlohmann::json config;
  JobState state = JobState::pending;
  bool awaiting_files = false;
  std::string stage;
  double progress = 0.0;
  std::string created;
  std::string started;
  std::string finished;
  std::string error;

  nlohmann::json view() const {
    nlohmann::json j{{"id", id},           {"state", to_string(state)}, {"stage", stage},
                     {"progress", progress}, {"created", created},        {"awaiting_files", awaiting_files}};
    j["started"] = started.empty() ? nlohmann::json() : nlohmann::json(started);
    j["finished"] = finished.empty() ? nlohmann::json() : nlohmann::json(finished);
    if (state == JobState::failed) j["error"] = error;
    return j;
  }

  nlohmann::json to_json() const {
    auto j = view();
    j["config"] = config;
    j["error"] = error;
    return j;
  }

  static Job from_json(const nlohmann::json& j) {
    Job job;
    job.id = j.at("id").get<std::string>();
    job.config = j.at("config");
    job.state = job_state_from_string(j.at("state").get<std::string>()).value_or(JobState::failed);
    job.awaiting_files = j.value("awaiting_files", false);
    job.stage = j.value("stage", "");
    job.progress = j.value("progress", 0.0);
    job.created = j.value("created", "");
    job.started = j.at("started").is_string() ? j.at("started").get<std::string>() : "";
    job.finished = j.at("finished").is_string() ? j.at("finished").get<std::string>() : "";
    job.error = j.value("error", "");
    return job;
  }
};

struct Reply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";

  static Reply json(int status, const nlohmann::json& j) { return {status, j.dump(), "application/json"}; }
  static Reply error(int status, const std::string& message) { return json(status, {{"error", message}}); }
};

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Rejects absolute paths and parent references in upload names.
inline std::optional<std::filesystem::path> safe_relative(const std::string& name) {
  if (name.empty()) return std::nullopt;
  const std::filesystem::path p(name);
  if (p.is_absolute() || p.has_root_name()) return std::nullopt;
  for (const auto& part : p) {
    if (part == ".." || part == ".") return std::nullopt;
  }
  return p;
}

/// Raster as JSON: geometry plus rows top to bottom, null where missing.
inline nlohmann::json grid_json(const RasterLayer& layer) {
  const auto& g = layer.grid();
  auto rows = nlohmann::json::array();
  for (std::size_t r = 0; r < g.n_rows; ++r) {
    auto row = nlohmann::json::array();
    for (std::size_t c = 0; c < g.n_cols; ++c) {
      row.push_back(layer.missing(r, c) ? nlohmann::json() : nlohmann::json(layer.value(r, c)));
    }
    rows.push_back(std::move(row));
  }
  return {{"ncols", g.n_cols},       {"nrows", g.n_rows},       {"xllcorner", g.x_ll},
          {"yllcorner", g.y_ll},     {"cellsize", g.cell_size}, {"values", std::move(rows)}};
}

class JobService {
 public:
  /// `start_workers` false leaves submitted jobs pending (used by tests).
  JobService(std::filesystem::path workspace, std::size_t max_running, bool start_workers = true)
      : workspace_(std::move(workspace)), max_running_(std::max<std::size_t>(1, max_running)) {
    std::filesystem::create_directories(workspace_);
    reload();
    if (start_workers) {
      for (std::size_t i = 0; i < max_running_; ++i) workers_.emplace_back([this] { worker_loop(); });
    }
  }

  ~JobService() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  JobService(const JobService&) = delete;
  JobService& operator=(const JobService&) = delete;

  const std::filesystem::path& workspace() const { return workspace_; }
  std::filesystem::path job_dir(const std::string& id) const { return workspace_ / id; }
  std::filesystem::path inputs_dir(const std::string& id) const { return job_dir(id) / "inputs"; }
  std::filesystem::path results_dir(const std::string& id) const { return job_dir(id) / "results"; }

  /// POST /jobs. Body is {"config": {...}, "defer": bool} or a bare config.
  Reply submit(const std::string& body) {
    nlohmann::json payload;
    try {
      payload = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      return invalid_payload(std::string("request body is not JSON: ") + e.what());
    }
    if (!payload.is_object()) return invalid_payload("request body must be a JSON object");
    const bool defer = payload.contains("config") && payload.value("defer", false);
    nlohmann::json config = payload.contains("config") ? payload.at("config") : payload;

    Job job;
    job.id = new_id();
    job.config = config;
    job.created = utc_now();
    std::filesystem::create_directories(inputs_dir(job.id));
    if (defer) {
      try {
        pipeline::parse_config(config, inputs_dir(job.id));
      } catch (const Error& e) {
        std::filesystem::remove_all(job_dir(job.id));
        return invalid_payload(e.what());
      }
      job.awaiting_files = true;
      persist_and_register(job);
      return Reply::json(201, {{"id", job.id}, {"state", "pending"}, {"awaiting_files", true}});
    }
    auto [ok, validation] = check(job);
    if (!ok) {
      std::filesystem::remove_all(job_dir(job.id));
      return Reply::json(400, {{"error", "validation failed"}, {"validation", validation}});
    }
    persist_and_register(job);
    enqueue(job.id);
    return Reply::json(201, {{"id", job.id}, {"state", "pending"}, {"validation", validation}});
  }

  /// POST /jobs/{id}/files. Stores uploads under the job inputs; with
  /// `submit` the job is validated and queued.
  Reply upload(const std::string& id, const std::vector<std::pair<std::string, std::string>>& files, bool submit) {
    std::unique_lock lock(mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return Reply::error(404, "unknown job " + id);
    if (!it->second.awaiting_files) return Reply::error(409, "job " + id + " no longer accepts files");
    lock.unlock();
    std::vector<std::string> stored;
    for (const auto& [name, content] : files) {
      const auto rel = safe_relative(name);
      if (!rel) return Reply::error(400, "invalid file name '" + name + "'");
      const auto path = inputs_dir(id) / *rel;
      std::filesystem::create_directories(path.parent_path());
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out.write(content.data(), static_cast<std::streamsize>(content.size()));
      if (!out) return Reply::error(500, "cannot store '" + name + "'");
      stored.push_back(rel->generic_string());
    }
    nlohmann::json body{{"id", id}, {"stored", stored}};
    if (!submit) return Reply::json(200, body);

    lock.lock();
    Job job = jobs_.at(id);
    lock.unlock();
    auto [ok, validation] = check(job);
    body["validation"] = validation;
    if (!ok) {
      body["error"] = "validation failed";
      return Reply::json(400, body);
    }
    lock.lock();
    jobs_.at(id).awaiting_files = false;
    persist(jobs_.at(id));
    lock.unlock();
    enqueue(id);
    body["state"] = "pending";
    return Reply::json(200, body);
  }

  Reply status(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return Reply::error(404, "unknown job " + id);
    return Reply::json(200, it->second.view());
  }

  Reply list() const {
    std::lock_guard lock(mutex_);
    auto arr = nlohmann::json::array();
    for (const auto& [id, job] : jobs_) arr.push_back(job.view());
    return Reply::json(200, {{"jobs", arr}});
  }

  Reply manifest(const std::string& id) const {
    if (auto r = require_done(id)) return *r;
    std::ifstream in(results_dir(id) / "manifest.json", std::ios::binary);
    if (!in) return Reply::error(500, "manifest missing for job " + id);
    std::ostringstream ss;
    ss << in.rdbuf();
    return {200, ss.str(), "application/json"};
  }

  /// Selector keys: family, species, variant, scenario, timestamp, summary;
  /// `format` = json (default for rasters) or asc/raw. Several matches
  /// return the matching manifest entries.
  Reply results(const std::string& id, const std::map<std::string, std::string>& query) const {
    if (auto r = require_done(id)) return *r;
    pipeline::Manifest m;
    try {
      m = pipeline::load_manifest(results_dir(id));
    } catch (const std::exception& e) {
      return Reply::error(500, e.what());
    }
    std::vector<const pipeline::ManifestEntry*> matches;
    for (const auto& f : m.files) {
      bool ok = true;
      for (const auto& [k, v] : query) {
        if (k == "format") continue;
        if (k == "family") ok = ok && f.family == v;
        else if (k == "species" || k == "variant" || k == "scenario" || k == "timestamp" || k == "summary") {
          auto it = f.keys.find(k);
          ok = ok && it != f.keys.end() && it->second == v;
        }
      }
      if (ok) matches.push_back(&f);
    }
    if (matches.empty()) return Reply::error(404, "no result matches the selector");
    if (matches.size() > 1) {
      pipeline::Manifest subset;
      for (const auto* f : matches) subset.files.push_back(*f);
      return Reply::json(200, {{"matches", subset.to_json().at("files")}});
    }
    const auto& f = *matches.front();
    std::ifstream in(results_dir(id) / f.path, std::ios::binary);
    if (!in) return Reply::error(500, "missing result file " + f.path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const auto fmt = query.count("format") ? query.at("format") : std::string(f.family == "raster" ? "json" : "raw");
    if (f.family == "raster" && fmt == "json") {
      std::istringstream grid_text(ss.str());
      auto j = grid_json(parse_ascii_grid(grid_text, f.path));
      for (const auto& [k, v] : f.keys) j[k] = v;
      j["path"] = f.path;
      return Reply::json(200, j);
    }
    if (fmt != "raw" && fmt != "asc" && fmt != "csv") return Reply::error(400, "unknown format '" + fmt + "'");
    const std::string type = f.path.ends_with(".csv")   ? "text/csv"
                             : f.path.ends_with(".asc") ? "text/plain"
                                                        : "application/octet-stream";
    return {200, ss.str(), type};
  }

  /// Blocks until no job is pending in the queue or running.
  void wait_idle() {
    std::unique_lock lock(mutex_);
    idle_cv_.wait(lock, [&] { return queue_.empty() && running_ == 0; });
  }

  void register_routes(httplib::Server& server) {
    auto send = [](httplib::Response& res, const Reply& r) {
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    };
    server.Get("/healthz", [send](const httplib::Request&, httplib::Response& res) {
      send(res, Reply::json(200, {{"status", "ok"}}));
    });
    server.Get("/jobs", [this, send](const httplib::Request&, httplib::Response& res) { send(res, list()); });
    server.Post("/jobs", [this, send](const httplib::Request& req, httplib::Response& res) { send(res, submit(req.body)); });
    server.Post(R"(/jobs/([A-Za-z0-9]+)/files)", [this, send](const httplib::Request& req, httplib::Response& res) {
      std::vector<std::pair<std::string, std::string>> files;
      for (const auto& [field, file] : req.files) {
        files.emplace_back(file.filename.empty() ? field : (field == "file" ? file.filename : field), file.content);
      }
      const bool go = req.has_param("submit") && req.get_param_value("submit") != "0";
      send(res, upload(req.matches[1], files, go));
    });
    server.Get(R"(/jobs/([A-Za-z0-9]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, status(req.matches[1]));
    });
    server.Get(R"(/jobs/([A-Za-z0-9]+)/manifest)", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, manifest(req.matches[1]));
    });
    server.Get(R"(/jobs/([A-Za-z0-9]+)/results)", [this, send](const httplib::Request& req, httplib::Response& res) {
      std::map<std::string, std::string> q;
      for (const auto& [k, v] : req.params) q[k] = v;
      send(res, results(req.matches[1], q));
    });
  }

 private:
  Reply invalid_payload(const std::string& message) const {
    pipeline::ValidationTable t;
    t.add("config", "parse", pipeline::Status::error, message);
    return Reply::json(400, {{"error", message}, {"validation", t.to_json()}});
  }

  std::pair<bool, nlohmann::json> check(const Job& job) const {
    try {
      const auto cfg = pipeline::parse_config(job.config, inputs_dir(job.id));
      const auto table = pipeline::validate_inputs(cfg);
      return {!table.has_errors(), table.to_json()};
    } catch (const Error& e) {
      pipeline::ValidationTable t;
      t.add("config", "parse", pipeline::Status::error, e.what());
      return {false, t.to_json()};
    }
  }

  std::optional<Reply> require_done(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return Reply::error(404, "unknown job " + id);
    if (it->second.state != JobState::done) {
      return Reply::json(409, {{"error", "job is not done"}, {"state", to_string(it->second.state)}});
    }
    return std::nullopt;
  }

  std::string new_id() {
    static const char* hex = "0123456789abcdef";
    std::lock_guard lock(mutex_);
    for (;;) {
      std::string id;
      for (int i = 0; i < 16; ++i) id += hex[id_rng_() % 16];
      if (!jobs_.count(id) && !std::filesystem::exists(workspace_ / id)) return id;
    }
  }

  void persist(const Job& job) const {
    const auto dir = job_dir(job.id);
    std::filesystem::create_directories(dir);
    const auto tmp = dir / "job.json.tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << job.to_json().dump(2) << '\n';
    }
    std::filesystem::rename(tmp, dir / "job.json");
  }

  void persist_and_register(const Job& job) {
    std::lock_guard lock(mutex_);
    persist(job);
    jobs_[job.id] = job;
  }

  void enqueue(const std::string& id) {
    {
      std::lock_guard lock(mutex_);
      queue_.push_back(id);
    }
    cv_.notify_one();
  }

  /// Done and failed jobs are kept; interrupted or queued ones run again.
  void reload() {
    std::vector<std::string> requeue;
    for (const auto& entry : std::filesystem::directory_iterator(workspace_)) {
      const auto file = entry.path() / "job.json";
      if (!entry.is_directory() || !std::filesystem::exists(file)) continue;
      try {
        std::ifstream in(file);
        Job job = Job::from_json(nlohmann::json::parse(in));
        if (job.state == JobState::running) {
          job.state = JobState::pending;
          job.progress = 0.0;
          job.stage.clear();
          job.started.clear();
          persist(job);
        }
        if (job.state == JobState::pending && !job.awaiting_files) requeue.push_back(job.id);
        jobs_[job.id] = std::move(job);
      } catch (const std::exception&) {
        // Unreadable job directories are left untouched.
      }
    }
    std::sort(requeue.begin(), requeue.end(), [&](const auto& a, const auto& b) {
      return std::tie(jobs_[a].created, a) < std::tie(jobs_[b].created, b);
    });
    for (auto& id : requeue) queue_.push_back(id);
  }

  void worker_loop() {
    for (;;) {
      std::string id;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        id = queue_.front();
        queue_.pop_front();
        ++running_;
        auto& job = jobs_.at(id);
        job.state = JobState::running;
        job.started = utc_now();
        persist(job);
      }
      execute(id);
      {
        std::lock_guard lock(mutex_);
        --running_;
      }
      idle_cv_.notify_all();
    }
  }

  void execute(const std::string& id) {
    nlohmann::json config;
    {
      std::lock_guard lock(mutex_);
      config = jobs_.at(id).config;
    }
    try {
      auto cfg = pipeline::parse_config(config, inputs_dir(id));
      cfg.output = results_dir(id);
      cfg.workers = 1;
      std::filesystem::remove_all(results_dir(id));
      auto bundle = pipeline::run_analysis(cfg, [&](const std::string& species, const std::string& stage, double f) {
        std::lock_guard lock(mutex_);
        auto& job = jobs_.at(id);
        job.stage = species + ":" + stage;
        job.progress = std::max(job.progress, std::min(f, 1.0));
        persist(job);
      });
      pipeline::export_results(bundle, results_dir(id));
      std::lock_guard lock(mutex_);
      auto& job = jobs_.at(id);
      job.state = JobState::done;
      job.stage = "done";
      job.progress = 1.0;
      job.finished = utc_now();
      persist(job);
    } catch (const std::exception& e) {
      std::lock_guard lock(mutex_);
      auto& job = jobs_.at(id);
      job.state = JobState::failed;
      job.error = e.what();
      job.finished = utc_now();
      persist(job);
    }
  }

  std::filesystem::path workspace_;
  std::size_t max_running_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::map<std::string, Job> jobs_;
  std::deque<std::string> queue_;
  std::size_t running_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
  std::mt19937_64 id_rng_{std::random_device{}()};
};

}  // namespace sdm::service
