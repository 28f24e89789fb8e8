#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <string>

#include "aicollab/error.hpp"
#include "aicollab/experiment.hpp"

namespace aicollab {

// The listening port is taken (or otherwise unbindable).
class BindError : public Error {
 public:
  using Error::Error;
};

struct HttpServiceOptions {
  std::string researcher_token;      // required for every /v1 route
  std::string slack_signing_secret;  // empty disables /slack/events
  std::string cors_origin;           // empty sends no CORS headers
  std::size_t idempotency_cache = 4096;
  std::chrono::milliseconds stream_poll{500};
};

// JSON-over-HTTP front of an ExperimentService, versioned under /v1, with
// server-sent event streams for analytics and the loopback chat.
class HttpService {
 public:
  HttpService(std::shared_ptr<ExperimentService> service, HttpServiceOptions options);
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  // Port 0 picks a free port. Returns the bound port; throws BindError.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace aicollab
