#pragma once

#include <chrono>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace aicollab {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An argument violated an operation's precondition.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Structured input failed validation. Carries every finding, not just the first.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> findings);
  ValidationError(const std::string& what, std::vector<std::string> findings);

  const std::vector<std::string>& findings() const noexcept { return findings_; }

 private:
  std::vector<std::string> findings_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Operation not legal in the current lifecycle state (ended session, closed experiment, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

class StorageError : public Error {
 public:
  using Error::Error;
};

enum class RemoteErrorKind {
  auth,
  rate_limit,
  network,
  timeout,
  server,
  content_policy,
  budget_exceeded,
  invalid_request,
  not_found,
};

const char* to_string(RemoteErrorKind kind) noexcept;

// Failure talking to a remote backend (chat model, embeddings, chat platform).
class RemoteError : public Error {
 public:
  RemoteError(RemoteErrorKind kind, const std::string& what,
              std::optional<std::chrono::milliseconds> retry_after = std::nullopt);

  RemoteErrorKind kind() const noexcept { return kind_; }
  std::optional<std::chrono::milliseconds> retry_after() const noexcept { return retry_after_; }
  int attempts() const noexcept { return attempts_; }
  void set_attempts(int attempts) noexcept { attempts_ = attempts; }

  // Only rate limits, network faults, timeouts and 5xx responses are worth another attempt.
  bool retryable() const noexcept;

 private:
  RemoteErrorKind kind_;
  std::optional<std::chrono::milliseconds> retry_after_;
  int attempts_ = 1;
};

}  // namespace aicollab
