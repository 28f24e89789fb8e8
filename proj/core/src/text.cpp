#include "aicollab/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <regex>

#include "aicollab/error.hpp"

namespace aicollab::text {
namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

char lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

}  // namespace

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = lower(c);
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool is_blank(std::string_view s) { return trim(s).empty(); }

std::vector<std::string_view> split_whitespace(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    const std::size_t start = i;
    while (i < s.size() && !is_space(s[i])) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

std::size_t word_count(std::string_view s) { return split_whitespace(s).size(); }

std::vector<std::size_t> find_all_ci(std::string_view haystack, std::string_view needle) {
  std::vector<std::size_t> out;
  if (needle.empty() || needle.size() > haystack.size()) return out;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    std::size_t j = 0;
    while (j < needle.size() && lower(haystack[i + j]) == lower(needle[j])) ++j;
    if (j == needle.size()) out.push_back(i);
  }
  return out;
}

bool contains_ci(std::string_view haystack, std::string_view needle) {
  return !find_all_ci(haystack, needle).empty();
}

std::vector<std::string> chunk_utf8(std::string_view s, std::size_t max_bytes) {
  if (max_bytes < 4) throw ParameterError("chunk size must be at least 4 bytes");
  std::vector<std::string> out;
  while (!s.empty()) {
    std::size_t cut = std::min(max_bytes, s.size());
    if (cut < s.size()) {
      // back off continuation bytes (10xxxxxx)
      while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut;
    }
    out.emplace_back(s.substr(0, cut));
    s.remove_prefix(cut);
  }
  return out;
}

std::string format_utc(double epoch_seconds) {
  const double whole = std::floor(epoch_seconds);
  const auto secs = static_cast<std::time_t>(whole);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[40];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  std::string out(buf);
  const auto millis = static_cast<int>(std::lround((epoch_seconds - whole) * 1000.0));
  if (millis > 0 && millis < 1000) {
    char frac[8];
    std::snprintf(frac, sizeof(frac), ".%03d", millis);
    out += frac;
  }
  out += 'Z';
  return out;
}

std::string redact_credentials(std::string_view s, const std::vector<std::string>& known_secrets) {
  static const std::regex bearer(R"((Bearer|Basic)\s+[A-Za-z0-9._~+/=-]+)", std::regex::icase);
  static const std::regex key(R"(\b(sk|xox[abprs]|xapp)-[A-Za-z0-9_-]{6,})");
  static const std::regex field(
      R"re(("[A-Za-z_-]*(api[_-]?key|token|secret|password|authorization)[A-Za-z_-]*"\s*:\s*)"(?:[^"\\]|\\.)*")re",
      std::regex::icase);
  std::string out(s);
  for (const auto& secret : known_secrets) {
    if (secret.size() < 4) continue;
    for (auto pos = out.find(secret); pos != std::string::npos; pos = out.find(secret, pos + 10)) {
      out.replace(pos, secret.size(), "[REDACTED]");
    }
  }
  out = std::regex_replace(out, bearer, "$1 [REDACTED]");
  out = std::regex_replace(out, key, "$1-[REDACTED]");
  out = std::regex_replace(out, field, "$1\"[REDACTED]\"");
  return out;
}

}  // namespace aicollab::text
