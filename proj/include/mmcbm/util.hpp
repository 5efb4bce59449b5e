#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mmcbm {

// 64-bit FNV-1a. Used for content hashes in determinism checks, not security.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

// Lower-case, alphanumerics kept, runs of anything else collapsed to '-'.
std::string slugify(std::string_view text);
std::string trim(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// Derive an independent seed for sub-task `index` of a job seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace mmcbm
