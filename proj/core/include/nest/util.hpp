#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nest {

// splitmix64 step; used to derive independent RNG streams from (seed, tags).
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

std::uint64_t fnv1a64(const std::string& s);

// Hex SHA-1 of the git blob encoding ("blob <len>\0" + content) of a file.
std::string git_blob_sha1(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

std::string format_double(double v);  // shortest round-trippable decimal

}  // namespace nest
