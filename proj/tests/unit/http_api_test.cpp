#include <filesystem>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "seqmatch/service/http_api.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines an _res macro.
#include <httplib.h>

using namespace seqmatch::service;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class HttpFixture : public ::testing::Test {
 protected:
  void start(HttpOptions options = {}) {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("seqmatch_http_" + std::to_string(rd()) + std::to_string(rd()));
    service_ = std::make_unique<TrialService>(ServiceOptions{dir_});
    api_ = std::make_unique<HttpApi>(*service_, options);
    port_ = api_->bind_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { api_->serve(); });
    api_->wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  void TearDown() override {
    if (api_) api_->stop();
    if (thread_.joinable()) thread_.join();
    client_.reset();
    api_.reset();
    service_.reset();
    fs::remove_all(dir_);
  }

  httplib::Result post(const std::string& path, const json& body, const httplib::Headers& headers = {}) {
    return client_->Post(path, headers, body.dump(), "application/json");
  }

  fs::path dir_;
  std::unique_ptr<TrialService> service_;
  std::unique_ptr<HttpApi> api_;
  std::thread thread_;
  int port_ = -1;
  std::unique_ptr<httplib::Client> client_;
};

const json kSpec = {{"trial_id", "web"},
                    {"covariates", {{{"name", "age"}, {"type", "continuous"}}}},
                    {"n_target", 4},
                    {"seed", 1}};

}  // namespace

TEST_F(HttpFixture, FullLifecycle) {
  start();
  auto health = client_->Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);

  auto created = post("/trials", kSpec);
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  EXPECT_EQ(created->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_EQ(post("/trials", kSpec)->status, 409);

  auto first = post("/trials/web/subjects", {{"covariates", {40}}}, {{"Idempotency-Key", "a"}});
  ASSERT_TRUE(first);
  EXPECT_EQ(first->status, 201);
  auto again = post("/trials/web/subjects", {{"covariates", {40}}}, {{"Idempotency-Key", "a"}});
  EXPECT_EQ(again->status, 200);
  EXPECT_EQ(json::parse(again->body)["subject_id"], json::parse(first->body)["subject_id"]);

  for (double x : {40.0, 50.0, 50.0}) EXPECT_EQ(post("/trials/web/subjects", {{"covariates", {x}}})->status, 201);
  auto full = post("/trials/web/subjects", {{"covariates", {1}}});
  EXPECT_EQ(full->status, 409);
  EXPECT_EQ(json::parse(full->body)["error"], "trial_complete");

  auto state = client_->Get("/trials/web");
  ASSERT_TRUE(state);
  const json st = json::parse(state->body);
  EXPECT_EQ(st["t"], 4);
  json responses = json::object();
  for (const auto& s : st["subjects"]) responses[std::to_string(s["id"].get<int>())] = s["id"].get<double>() * s["id"].get<double>();
  auto report = post("/trials/web/report", {{"responses", responses}});
  ASSERT_TRUE(report);
  EXPECT_EQ(report->status, 200) << report->body;

  auto list = client_->Get("/trials");
  EXPECT_EQ(json::parse(list->body).size(), 1u);
}

TEST_F(HttpFixture, ErrorsAreJson) {
  start();
  auto missing = client_->Get("/trials/none");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json::parse(missing->body)["error"], "not_found");
  auto malformed = client_->Post("/trials", "{not json", "application/json");
  EXPECT_EQ(malformed->status, 400);
  EXPECT_EQ(json::parse(malformed->body)["error"], "invalid_argument");
  auto preflight = client_->Options("/trials");
  EXPECT_EQ(preflight->status, 204);
}

TEST_F(HttpFixture, BearerToken) {
  start({"s3cret", "*"});
  EXPECT_EQ(client_->Get("/trials")->status, 401);
  EXPECT_EQ(client_->Get("/healthz")->status, 200);
  EXPECT_EQ(client_->Get("/trials", {{"Authorization", "Bearer s3cret"}})->status, 200);
  EXPECT_EQ(post("/trials", kSpec, {{"Authorization", "Bearer wrong"}})->status, 401);
}
