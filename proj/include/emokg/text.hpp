#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace emokg {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
/// Lowercased alphanumeric tokens; every other character separates tokens.
std::vector<std::string> tokenize(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
bool contains_ci(std::string_view haystack, std::string_view needle);

/// FNV-1a 64-bit. Stable across platforms; used for seeding and content digests.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace emokg
