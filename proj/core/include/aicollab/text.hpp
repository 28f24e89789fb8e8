#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// Small text helpers shared across modules. ASCII-only case folding; bytes
// outside ASCII are passed through untouched.
namespace aicollab::text {

std::string to_lower_ascii(std::string_view s);
std::string_view trim(std::string_view s);
bool is_blank(std::string_view s);

// Whitespace-delimited chunks.
std::vector<std::string_view> split_whitespace(std::string_view s);
std::size_t word_count(std::string_view s);

// Every case-insensitive occurrence of needle in haystack, as byte offsets.
// Overlapping occurrences are reported.
std::vector<std::size_t> find_all_ci(std::string_view haystack, std::string_view needle);
bool contains_ci(std::string_view haystack, std::string_view needle);

// Splits into pieces of at most max_bytes without cutting a UTF-8 sequence.
std::vector<std::string> chunk_utf8(std::string_view s, std::size_t max_bytes);

// Masks credentials before text reaches a log, an audit sink or an error
// message: bearer tokens, sk-/xox?- style keys, values of credential-named
// JSON fields, and every occurrence of the given known secrets.
std::string redact_credentials(std::string_view s, const std::vector<std::string>& known_secrets = {});

// "2025-01-01T00:00:05Z", with milliseconds appended when the value is fractional.
std::string format_utc(double epoch_seconds);

}  // namespace aicollab::text
