#pragma once

#include <string>
#include <string_view>

namespace aicollab::crypto {

// Lowercase hex digests.
std::string sha256_hex(std::string_view data);
std::string hmac_sha256_hex(std::string_view key, std::string_view message);

// Comparison time depends only on the lengths, never on where the inputs differ.
bool constant_time_equal(std::string_view a, std::string_view b) noexcept;

}  // namespace aicollab::crypto
