#pragma once

#include <memory>
#include <string>

#include "seqmatch/service/trial_service.hpp"

namespace seqmatch::service {

struct HttpOptions {
  /// When non-empty, every /trials request needs "Authorization: Bearer <token>".
  std::string token;
  /// Value of Access-Control-Allow-Origin; empty disables CORS headers.
  std::string allow_origin = "*";
};

/// JSON-over-HTTP front end for TrialService:
///   POST /trials                   create
///   GET  /trials                   list
///   GET  /trials/{id}              state
///   POST /trials/{id}/subjects     enroll (Idempotency-Key header or body field)
///   POST /trials/{id}/report       estimate + test
///   GET  /healthz
/// Errors come back as {"error": code, "message": text} with a matching status.
class HttpApi {
 public:
  HttpApi(TrialService& service, HttpOptions options = {});
  ~HttpApi();
  HttpApi(const HttpApi&) = delete;
  HttpApi& operator=(const HttpApi&) = delete;

  /// Binds and serves until stop(); returns false if the port cannot be bound.
  bool listen(const std::string& host, int port);
  /// Binds to an ephemeral port and returns it (or -1); follow with serve().
  int bind_any_port(const std::string& host);
  bool serve();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace seqmatch::service
