#include "aicollab/remote.hpp"

#include <httplib.h>

#include <algorithm>
#include <nlohmann/json.hpp>

#include "aicollab/text.hpp"
#include "http_client.hpp"

namespace aicollab {

using nlohmann::json;

namespace detail {

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  if (path_start == std::string::npos) {
    out.origin = url;
  } else {
    out.origin = url.substr(0, path_start);
    out.path = url.substr(path_start);
    while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  }
  return out;
}

HttpResponse http_post(const std::string& url, const std::map<std::string, std::string>& headers,
                       const std::string& body, const std::string& content_type, std::chrono::milliseconds timeout) {
  const auto split = split_url(url);
  httplib::Client client(split.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers hs;
  for (const auto& [k, v] : headers) hs.emplace(k, v);
  auto res = client.Post(split.path.empty() ? "/" : split.path, hs, body, content_type);
  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::Read || err == httplib::Error::Write || err == httplib::Error::ConnectionTimeout) {
      throw RemoteError(RemoteErrorKind::timeout, "request to " + split.origin + " timed out (" + httplib::to_string(err) + ")");
    }
    throw RemoteError(RemoteErrorKind::network, "request to " + split.origin + " failed: " + httplib::to_string(err));
  }
  HttpResponse out;
  out.status = res->status;
  out.body = res->body;
  for (const auto& [k, v] : res->headers) out.headers[text::to_lower_ascii(k)] = v;
  return out;
}

std::optional<std::chrono::milliseconds> parse_retry_after(const HttpResponse& response) {
  auto numeric = [](const std::string& s, double scale) -> std::optional<std::chrono::milliseconds> {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == 0 || !(v >= 0.0)) return std::nullopt;
      return std::chrono::milliseconds(static_cast<std::int64_t>(v * scale));
    } catch (const std::exception&) {
      return std::nullopt;
    }
  };
  if (auto it = response.headers.find("retry-after-ms"); it != response.headers.end()) {
    if (auto v = numeric(it->second, 1.0)) return v;
  }
  if (auto it = response.headers.find("retry-after"); it != response.headers.end()) {
    if (auto v = numeric(it->second, 1000.0)) return v;
  }
  return std::nullopt;
}

RemoteError classify_http_failure(const HttpResponse& response) {
  std::string message = "HTTP " + std::to_string(response.status);
  std::string code;
  try {
    const auto body = json::parse(response.body);
    if (body.contains("error")) {
      const auto& err = body["error"];
      if (err.is_object()) {
        message += ": " + text::redact_credentials(err.value("message", std::string()));
        code = err.value("code", std::string());
        if (code.empty()) code = err.value("type", std::string());
      } else if (err.is_string()) {
        code = err.get<std::string>();
        message += ": " + text::redact_credentials(code);
      }
    }
  } catch (const json::exception&) {
    // non-JSON error body
  }
  const int s = response.status;
  if (s == 401 || s == 403) return RemoteError(RemoteErrorKind::auth, message);
  if (s == 429) return RemoteError(RemoteErrorKind::rate_limit, message, parse_retry_after(response));
  if (s == 404) return RemoteError(RemoteErrorKind::not_found, message);
  if (s == 408) return RemoteError(RemoteErrorKind::timeout, message);
  if (code == "content_filter" || code == "content_policy_violation") {
    return RemoteError(RemoteErrorKind::content_policy, message);
  }
  if (s >= 500) return RemoteError(RemoteErrorKind::server, message, parse_retry_after(response));
  return RemoteError(RemoteErrorKind::invalid_request, message);
}

}  // namespace detail

RemoteChatBackend::RemoteChatBackend(RemoteEndpoint endpoint, AuditSink audit)
    : endpoint_(std::move(endpoint)), audit_(std::move(audit)) {
  if (endpoint_.base_url.empty()) throw ConfigError("remote chat backend needs a base URL");
  detail::split_url(endpoint_.base_url);
}

CompletionResult RemoteChatBackend::complete_once(const CompletionRequest& request) {
  const auto body = to_chat_completions_body(request).dump();
  if (audit_) audit_("request", text::redact_credentials(body, {endpoint_.api_key}));
  std::map<std::string, std::string> headers;
  if (!endpoint_.api_key.empty()) headers["Authorization"] = "Bearer " + endpoint_.api_key;
  if (!request.request_id.empty()) headers["X-Request-Id"] = request.request_id;
  const auto res = detail::http_post(endpoint_.base_url + "/chat/completions", headers, body, "application/json",
                                     endpoint_.timeout);
  if (audit_) audit_("response", text::redact_credentials(res.body, {endpoint_.api_key}));
  if (res.status < 200 || res.status >= 300) throw detail::classify_http_failure(res);
  json parsed;
  try {
    parsed = json::parse(res.body);
  } catch (const json::exception& e) {
    throw RemoteError(RemoteErrorKind::server, std::string("unparseable completion body: ") + e.what());
  }
  return parse_chat_completions_response(parsed);
}

std::vector<EmbeddingVector> parse_embeddings_response(std::string_view body, std::size_t expected_count,
                                                       std::size_t dimension) {
  std::vector<EmbeddingVector> out;
  try {
    const auto parsed = json::parse(body);
    std::vector<std::pair<std::size_t, std::vector<double>>> rows;
    if (parsed.is_array()) {
      for (std::size_t i = 0; i < parsed.size(); ++i) rows.emplace_back(i, parsed[i].get<std::vector<double>>());
    } else {
      const auto& data = parsed.at("data");
      for (std::size_t i = 0; i < data.size(); ++i) {
        rows.emplace_back(data[i].value("index", i), data[i].at("embedding").get<std::vector<double>>());
      }
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [index, values] : rows) {
      if (values.size() != dimension) {
        throw RemoteError(RemoteErrorKind::server, "embedding " + std::to_string(index) + " has dimension " +
                                                       std::to_string(values.size()) + ", expected " +
                                                       std::to_string(dimension));
      }
      out.emplace_back(std::move(values));
    }
  } catch (const json::exception& e) {
    throw RemoteError(RemoteErrorKind::server, std::string("malformed embeddings response: ") + e.what());
  } catch (const ParameterError& e) {
    throw RemoteError(RemoteErrorKind::server, std::string("invalid embedding values: ") + e.what());
  }
  if (out.size() != expected_count) {
    throw RemoteError(RemoteErrorKind::server, "expected " + std::to_string(expected_count) + " embeddings, got " +
                                                   std::to_string(out.size()));
  }
  return out;
}

RemoteEmbedder::RemoteEmbedder(RemoteEmbedderConfig config, Sleeper sleeper)
    : config_(std::move(config)), retrier_(config_.retry, std::move(sleeper)) {
  if (config_.endpoint.base_url.empty()) throw ConfigError("remote embedder needs a base URL");
  if (config_.dimension == 0) throw ConfigError("remote embedder dimension must be positive");
  if (config_.max_concurrent == 0) throw ConfigError("remote embedder max_concurrent must be positive");
}

std::vector<EmbeddingVector> RemoteEmbedder::request(std::span<const std::string> texts) const {
  {
    std::unique_lock lock(slots_mutex_);
    slots_cv_.wait(lock, [&] { return active_ < config_.max_concurrent; });
    ++active_;
  }
  struct Release {
    const RemoteEmbedder* self;
    ~Release() {
      {
        std::lock_guard lock(self->slots_mutex_);
        --self->active_;
      }
      self->slots_cv_.notify_one();
    }
  } release{this};

  const auto body = json{{"model", config_.model}, {"input", std::vector<std::string>(texts.begin(), texts.end())}}.dump();
  std::map<std::string, std::string> headers;
  if (!config_.endpoint.api_key.empty()) headers["Authorization"] = "Bearer " + config_.endpoint.api_key;
  return retrier_.run([&](int) {
    const auto res = detail::http_post(config_.endpoint.base_url + "/embeddings", headers, body, "application/json",
                                       config_.endpoint.timeout);
    if (res.status < 200 || res.status >= 300) throw detail::classify_http_failure(res);
    return parse_embeddings_response(res.body, texts.size(), config_.dimension);
  });
}

EmbeddingVector RemoteEmbedder::embed_text(std::string_view text) const {
  if (text::is_blank(text)) throw ParameterError("embed_text: text is empty");
  const std::string owned(text);
  return request(std::span<const std::string>(&owned, 1)).front();
}

std::vector<EmbeddingVector> RemoteEmbedder::embed_batch(std::span<const std::string> texts) const {
  validate_batch(texts);
  if (texts.empty()) return {};
  return request(texts);
}

}  // namespace aicollab
