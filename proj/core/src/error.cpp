#include "aicollab/error.hpp"

#include <sstream>
#include <utility>

namespace aicollab {
namespace {

std::string join_findings(const std::string& what, const std::vector<std::string>& findings) {
  std::ostringstream out;
  out << what;
  for (const auto& f : findings) {
    out << "\n  - " << f;
  }
  return out.str();
}

}  // namespace

ValidationError::ValidationError(std::vector<std::string> findings)
    : ValidationError("validation failed", std::move(findings)) {}

ValidationError::ValidationError(const std::string& what, std::vector<std::string> findings)
    : Error(join_findings(what, findings)), findings_(std::move(findings)) {}

const char* to_string(RemoteErrorKind kind) noexcept {
  switch (kind) {
    case RemoteErrorKind::auth: return "auth";
    case RemoteErrorKind::rate_limit: return "rate_limit";
    case RemoteErrorKind::network: return "network";
    case RemoteErrorKind::timeout: return "timeout";
    case RemoteErrorKind::server: return "server";
    case RemoteErrorKind::content_policy: return "content_policy";
    case RemoteErrorKind::budget_exceeded: return "budget_exceeded";
    case RemoteErrorKind::invalid_request: return "invalid_request";
    case RemoteErrorKind::not_found: return "not_found";
  }
  return "unknown";
}

RemoteError::RemoteError(RemoteErrorKind kind, const std::string& what,
                         std::optional<std::chrono::milliseconds> retry_after)
    : Error(std::string(to_string(kind)) + ": " + what), kind_(kind), retry_after_(retry_after) {}

bool RemoteError::retryable() const noexcept {
  switch (kind_) {
    case RemoteErrorKind::rate_limit:
    case RemoteErrorKind::network:
    case RemoteErrorKind::timeout:
    case RemoteErrorKind::server:
      return true;
    default:
      return false;
  }
}

}  // namespace aicollab
