#pragma once

// Internal: the only place outside the HTTP service that touches cpp-httplib.

#include <chrono>
#include <map>
#include <string>

#include "aicollab/error.hpp"

namespace aicollab::detail {

struct HttpResponse {
  int status = 0;
  std::map<std::string, std::string> headers;  // keys lowercased
  std::string body;
};

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash, may be empty
};

SplitUrl split_url(const std::string& url);

// Transport failures surface as RemoteError(network | timeout).
HttpResponse http_post(const std::string& url, const std::map<std::string, std::string>& headers,
                       const std::string& body, const std::string& content_type, std::chrono::milliseconds timeout);

std::optional<std::chrono::milliseconds> parse_retry_after(const HttpResponse& response);

// Maps a non-2xx response onto the remote error taxonomy.
RemoteError classify_http_failure(const HttpResponse& response);

}  // namespace aicollab::detail
