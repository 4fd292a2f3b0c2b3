#include "seqmatch/service/http_api.hpp"

#include <httplib.h>

namespace seqmatch::service {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, {{"error", code}, {"message", message}});
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ServiceError(ErrorKind::invalid_argument, std::string("malformed JSON body: ") + e.what());
  }
}

}  // namespace

struct HttpApi::Impl {
  TrialService& service;
  HttpOptions options;
  httplib::Server server;

  Impl(TrialService& s, HttpOptions o) : service(s), options(std::move(o)) {}

  template <typename F>
  httplib::Server::Handler guarded(F f) {
    return [this, f](const httplib::Request& req, httplib::Response& res) {
      if (!options.token.empty() && req.get_header_value("Authorization") != "Bearer " + options.token) {
        send_error(res, 401, "unauthorized", "missing or invalid bearer token");
        return;
      }
      try {
        f(req, res);
      } catch (const ServiceError& e) {
        send_error(res, e.http_status(), e.code(), e.what());
      } catch (const json::exception& e) {
        send_error(res, 400, "invalid_argument", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  void install() {
    if (!options.allow_origin.empty()) {
      server.set_default_headers({{"Access-Control-Allow-Origin", options.allow_origin},
                                  {"Access-Control-Allow-Headers", "Authorization, Content-Type, Idempotency-Key"},
                                  {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
      server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    }
    server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}});
    });
    server.Post("/trials", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 201, service.create_trial(parse_body(req)));
    }));
    server.Get("/trials", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, service.list());
    }));
    server.Get(R"(/trials/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, service.state(req.matches[1]));
    }));
    server.Post(R"(/trials/([^/]+)/subjects)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      json body = parse_body(req);
      if (req.has_header("Idempotency-Key") && body.is_object() && !body.contains("idempotency_key")) {
        body["idempotency_key"] = req.get_header_value("Idempotency-Key");
      }
      const json decision = service.enroll(req.matches[1], body);
      send_json(res, decision.value("replayed", false) ? 200 : 201, decision);
    }));
    server.Post(R"(/trials/([^/]+)/report)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, service.report(req.matches[1], parse_body(req)));
    }));
  }
};

HttpApi::HttpApi(TrialService& service, HttpOptions options)
    : impl_(std::make_unique<Impl>(service, std::move(options))) {
  impl_->install();
}

HttpApi::~HttpApi() { stop(); }

bool HttpApi::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int HttpApi::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool HttpApi::serve() { return impl_->server.listen_after_bind(); }

void HttpApi::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

void HttpApi::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace seqmatch::service
