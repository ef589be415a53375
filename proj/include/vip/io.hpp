#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace vip::io {

using json = nlohmann::json;
// Serialization uses ordered_json throughout so emitted key order is a
// function of the code alone, never of hashing.
using ojson = nlohmann::ordered_json;

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);
std::vector<std::uint8_t> read_binary(const std::filesystem::path& path);
void write_binary(const std::filesystem::path& path, const void* data, std::size_t bytes);
void write_binary(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

// Calls fn(line_number, line) for every line; line numbers start at 0.
// A trailing newline does not produce an empty final line.
void for_each_line(const std::filesystem::path& path,
                   const std::function<void(std::size_t, std::string_view)>& fn);

// Decimal with 9 significant digits ("%.9g"), the pinned representation for
// signal values on disk.
std::string format_sig9(double v);

// The double nearest that 9-digit decimal; reported metrics pass through this
// so files carry stable, readable numbers.
double round_sig9(double v);

// FNV-1a 64 over the canonicalized config dump; stable across platforms and
// builds, unlike std::hash.
std::uint64_t fnv1a64(std::string_view s);
std::string hash_hex(std::uint64_t h);

}  // namespace vip::io
