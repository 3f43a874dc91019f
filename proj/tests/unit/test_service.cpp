#include <gtest/gtest.h>

#include <set>
#include <thread>

#include "helpers.hpp"
#include "sdmbart/ascii_grid.hpp"
#include "sdmbart/service.hpp"

using namespace sdm;
using sdm::service::JobService;
using sdm::service::Reply;
using testutil::read_file;
using testutil::TempDir;
using testutil::toy_dir;
using nlohmann::json;

namespace {

json quick(json config) {
  config["sampler"] = {{"trees", 20}, {"burn", 100}, {"draws", 100}};
  config["evaluation"]["cv_folds"] = 3;
  return config;
}

json toy_payload() { return {{"config", quick(testutil::toy_config_json())}}; }

std::string submit_ok(JobService& jobs, const json& payload = toy_payload()) {
  const auto r = jobs.submit(payload.dump());
  EXPECT_EQ(r.status, 201) << r.body;
  return json::parse(r.body).at("id").get<std::string>();
}

json body(const Reply& r) { return json::parse(r.body); }

std::map<std::string, std::string> selector(std::initializer_list<std::pair<const std::string, std::string>> kv) {
  return kv;
}

}  // namespace

TEST(Service, SubmitReturnsPendingJob) {
  TempDir ws;
  JobService jobs(ws.path(), 1, false);
  const auto r = jobs.submit(toy_payload().dump());
  ASSERT_EQ(r.status, 201) << r.body;
  const auto id = body(r).at("id").get<std::string>();
  EXPECT_EQ(body(r).at("state"), "pending");
  const auto st = jobs.status(id);
  ASSERT_EQ(st.status, 200);
  EXPECT_EQ(body(st).at("state"), "pending");
  EXPECT_EQ(body(st).at("progress"), 0.0);
  EXPECT_TRUE(body(st).at("started").is_null());
  EXPECT_TRUE(std::filesystem::exists(ws / id / "job.json"));
  EXPECT_EQ(jobs.status(id).body, st.body);
}

TEST(Service, SubmissionsGetDistinctIds) {
  TempDir ws;
  JobService jobs(ws.path(), 1, false);
  std::set<std::string> ids;
  for (int i = 0; i < 5; ++i) ids.insert(submit_ok(jobs));
  EXPECT_EQ(ids.size(), 5u);
  EXPECT_EQ(body(jobs.list()).at("jobs").size(), 5u);
}

TEST(Service, InvalidPayloadsAre400WithValidationTable) {
  TempDir ws;
  JobService jobs(ws.path(), 1, false);
  auto payload = toy_payload();
  payload["config"]["species"][0]["file"] = "/nonexistent/occ.tsv";
  auto r = jobs.submit(payload.dump());
  ASSERT_EQ(r.status, 400);
  const auto v = body(r).at("validation");
  EXPECT_EQ(v.at("valid"), false);
  bool found = false;
  for (const auto& row : v.at("rows")) {
    found = found || (row.at("status") == "error" && row.at("check") == "file exists" &&
                      row.at("item").get<std::string>().find("occ.tsv") != std::string::npos);
  }
  EXPECT_TRUE(found) << v.dump();

  r = jobs.submit("{ nope");
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(body(r).at("validation").at("rows").at(0).at("status"), "error");

  payload = toy_payload();
  payload["config"]["bogus"] = 1;
  r = jobs.submit(payload.dump());
  EXPECT_EQ(r.status, 400);
  EXPECT_NE(r.body.find("unknown key 'bogus'"), std::string::npos);
  EXPECT_EQ(body(jobs.list()).at("jobs").size(), 0u);
}

TEST(Service, UnknownJobIs404) {
  TempDir ws;
  JobService jobs(ws.path(), 1, false);
  EXPECT_EQ(jobs.status("deadbeef").status, 404);
  EXPECT_EQ(jobs.manifest("deadbeef").status, 404);
  EXPECT_EQ(jobs.results("deadbeef", {}).status, 404);
  EXPECT_EQ(jobs.upload("deadbeef", {}, false).status, 404);
}

TEST(Service, ResultsBeforeCompletionAre409) {
  TempDir ws;
  JobService jobs(ws.path(), 1, false);
  const auto id = submit_ok(jobs);
  EXPECT_EQ(jobs.results(id, selector({{"summary", "mean"}})).status, 409);
  EXPECT_EQ(jobs.manifest(id).status, 409);
}

TEST(Service, CompletedJobServesResults) {
  TempDir ws;
  std::string id;
  std::string first_manifest;
  std::string first_grid;
  {
    JobService jobs(ws.path(), 1);
    id = submit_ok(jobs);
    jobs.wait_idle();
    const auto st = body(jobs.status(id));
    ASSERT_EQ(st.at("state"), "done") << st.dump();
    EXPECT_EQ(st.at("progress"), 1.0);
    EXPECT_TRUE(st.at("started").is_string());
    EXPECT_TRUE(st.at("finished").is_string());

    const auto m = jobs.manifest(id);
    ASSERT_EQ(m.status, 200);
    first_manifest = m.body;
    std::set<std::string> listed{"manifest.json"};
    const auto manifest_doc = json::parse(m.body);
    for (const auto& f : manifest_doc.at("files")) listed.insert(f.at("path").get<std::string>());
    std::set<std::string> on_disk;
    const auto dir = jobs.results_dir(id);
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
      if (e.is_regular_file()) on_disk.insert(std::filesystem::relative(e.path(), dir).generic_string());
    }
    EXPECT_EQ(listed, on_disk);

    const auto sel = selector({{"family", "raster"}, {"summary", "mean"}, {"scenario", "ssp585"}, {"timestamp", "2090"}});
    const auto r = jobs.results(id, sel);
    ASSERT_EQ(r.status, 200) << r.body;
    first_grid = r.body;
    EXPECT_EQ(jobs.results(id, sel).body, r.body);
    const auto grid = body(r);
    const auto layer = load_ascii_grid(dir / "rasters/toyfish_suitable_habitat_ssp585_2090_mean.asc");
    ASSERT_EQ(grid.at("nrows"), layer.grid().n_rows);
    ASSERT_EQ(grid.at("ncols"), layer.grid().n_cols);
    EXPECT_EQ(grid.at("xllcorner"), layer.grid().x_ll);
    for (std::size_t row = 0; row < layer.grid().n_rows; ++row) {
      for (std::size_t col = 0; col < layer.grid().n_cols; ++col) {
        const auto& v = grid.at("values").at(row).at(col);
        if (layer.missing(row, col)) {
          EXPECT_TRUE(v.is_null());
        } else {
          EXPECT_EQ(v.get<double>(), layer.value(row, col));
        }
      }
    }
    EXPECT_TRUE(grid.at("values").at(0).at(0).is_null());

    auto asc = sel;
    asc["format"] = "asc";
    EXPECT_EQ(jobs.results(id, asc).body, read_file(dir / "rasters/toyfish_suitable_habitat_ssp585_2090_mean.asc"));

    const auto many = jobs.results(id, selector({{"family", "raster"}, {"scenario", "ssp126"}}));
    ASSERT_EQ(many.status, 200);
    EXPECT_EQ(body(many).at("matches").size(), 3u * 5u);
    EXPECT_EQ(jobs.results(id, selector({{"scenario", "ssp999"}})).status, 404);

    const auto table = jobs.results(id, selector({{"family", "importance"}}));
    ASSERT_EQ(table.status, 200);
    EXPECT_EQ(table.content_type, "text/csv");
    EXPECT_EQ(table.body.rfind("variable,iteration,importance", 0), 0u);

    const auto averaged = jobs.results(id, selector({{"scenario", "fit"}, {"timestamp", "average"}, {"summary", "binary"}}));
    EXPECT_EQ(averaged.status, 200);
  }
  // A restarted service still serves the finished job unchanged.
  JobService again(ws.path(), 1);
  EXPECT_EQ(body(again.status(id)).at("state"), "done");
  EXPECT_EQ(again.manifest(id).body, first_manifest);
  EXPECT_EQ(again.results(id, selector({{"family", "raster"}, {"summary", "mean"}, {"scenario", "ssp585"}, {"timestamp", "2090"}})).body,
            first_grid);
}

TEST(Service, InterruptedJobIsRequeuedOnRestart) {
  TempDir ws;
  std::string id;
  {
    JobService jobs(ws.path(), 1, false);
    id = submit_ok(jobs);
  }
  auto doc = json::parse(read_file(ws / id / "job.json"));
  doc["state"] = "running";
  doc["progress"] = 0.4;
  testutil::write_file(ws / id / "job.json", doc.dump());
  JobService jobs(ws.path(), 1);
  jobs.wait_idle();
  EXPECT_EQ(body(jobs.status(id)).at("state"), "done");
}

TEST(Service, FailedRunIsReported) {
  TempDir ws;
  TempDir data;
  std::filesystem::copy_file(toy_dir() / "layers/temp.asc", data / "temp.asc");
  auto payload = toy_payload();
  payload["config"]["fit_layers"]["temp"] = (data / "temp.asc").string();
  std::string id;
  {
    JobService jobs(ws.path(), 1, false);
    id = submit_ok(jobs, payload);
  }
  std::filesystem::remove(data / "temp.asc");
  JobService jobs(ws.path(), 1);
  jobs.wait_idle();
  const auto st = body(jobs.status(id));
  EXPECT_EQ(st.at("state"), "failed");
  EXPECT_NE(st.at("error").get<std::string>().find("temp.asc"), std::string::npos) << st.dump();
  EXPECT_EQ(jobs.results(id, {}).status, 409);
}

TEST(Service, UploadFlow) {
  TempDir ws;
  JobService jobs(ws.path(), 1);
  std::ifstream in(toy_dir() / "config.json");
  const auto relative_config = quick(json::parse(in));
  auto r = jobs.submit(json{{"config", relative_config}, {"defer", true}}.dump());
  ASSERT_EQ(r.status, 201) << r.body;
  const auto id = body(r).at("id").get<std::string>();
  EXPECT_EQ(body(r).at("awaiting_files"), true);

  EXPECT_EQ(jobs.upload(id, {{"../escape.txt", "x"}}, false).status, 400);
  EXPECT_EQ(jobs.upload(id, {{"/abs.txt", "x"}}, false).status, 400);

  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(toy_dir())) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), toy_dir()).generic_string();
    if (rel.ends_with(".asc") || rel.ends_with(".tsv")) files.emplace_back(rel, read_file(e.path()));
  }
  // Validation fails until every file is present.
  const auto partial = jobs.upload(id, {files.front()}, true);
  EXPECT_EQ(partial.status, 400);
  EXPECT_EQ(body(partial).at("validation").at("valid"), false);

  r = jobs.upload(id, files, true);
  ASSERT_EQ(r.status, 200) << r.body;
  EXPECT_EQ(body(r).at("stored").size(), files.size());
  EXPECT_EQ(jobs.upload(id, files, true).status, 409);
  jobs.wait_idle();
  EXPECT_EQ(body(jobs.status(id)).at("state"), "done") << jobs.status(id).body;
}

TEST(Service, HttpEndpoints) {
  TempDir ws;
  JobService jobs(ws.path(), 1);
  httplib::Server server;
  jobs.register_routes(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto health = client.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body).at("status"), "ok");

  auto missing = client.Get("/jobs/0123abcd");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);

  auto created = client.Post("/jobs", toy_payload().dump(), "application/json");
  ASSERT_TRUE(created);
  ASSERT_EQ(created->status, 201) << created->body;
  const auto id = json::parse(created->body).at("id").get<std::string>();

  double last = 0.0;
  std::string state;
  for (int i = 0; i < 6000; ++i) {
    auto st = client.Get("/jobs/" + id);
    ASSERT_TRUE(st);
    const auto j = json::parse(st->body);
    EXPECT_GE(j.at("progress").get<double>(), last);
    last = j.at("progress").get<double>();
    state = j.at("state").get<std::string>();
    if (state == "done" || state == "failed") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  ASSERT_EQ(state, "done");
  EXPECT_EQ(last, 1.0);

  auto manifest = client.Get("/jobs/" + id + "/manifest");
  ASSERT_TRUE(manifest);
  EXPECT_EQ(manifest->status, 200);
  EXPECT_EQ(json::parse(manifest->body).at("format"), "sdmbart-results");

  auto grid = client.Get("/jobs/" + id + "/results?summary=q975&scenario=ssp126&timestamp=2030");
  ASSERT_TRUE(grid);
  EXPECT_EQ(grid->status, 200);
  EXPECT_EQ(json::parse(grid->body).at("values").size(), 10u);

  auto none = client.Get("/jobs/" + id + "/results?summary=nothing");
  ASSERT_TRUE(none);
  EXPECT_EQ(none->status, 404);

  auto deferred = client.Post("/jobs", json{{"config", testutil::toy_config_json()}, {"defer", true}}.dump(), "application/json");
  ASSERT_TRUE(deferred);
  ASSERT_EQ(deferred->status, 201);
  const auto did = json::parse(deferred->body).at("id").get<std::string>();
  httplib::MultipartFormDataItems items{{"file", "a,b\n", "notes/readme.csv", "text/csv"}};
  auto up = client.Post("/jobs/" + did + "/files", items);
  ASSERT_TRUE(up);
  EXPECT_EQ(up->status, 200) << up->body;
  EXPECT_EQ(read_file(jobs.inputs_dir(did) / "notes/readme.csv"), "a,b\n");

  server.stop();
  listener.join();
}
