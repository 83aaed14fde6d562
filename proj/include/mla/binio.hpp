#pragma once

// Little-endian binary I/O shared by the dataset and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mla/error.hpp"

namespace mla::binio {

template <typename U>
inline U to_little(U v) noexcept {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) out |= ((v >> (8 * i)) & 0xff) << (8 * (sizeof(U) - 1 - i));
    return out;
  }
}

inline void append_f64(std::string& buf, std::span<const double> values) {
  const std::size_t at = buf.size();
  buf.resize(at + values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(values[i]));
    std::memcpy(buf.data() + at + i * 8, &bits, 8);
  }
}

inline void append_u32(std::string& buf, std::span<const std::uint32_t> values) {
  const std::size_t at = buf.size();
  buf.resize(at + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = to_little(values[i]);
    std::memcpy(buf.data() + at + i * 4, &bits, 4);
  }
}

inline double read_f64(const std::string& buf, std::size_t at) {
  std::uint64_t bits;
  std::memcpy(&bits, buf.data() + at, 8);
  return std::bit_cast<double>(to_little(bits));
}

inline std::uint32_t read_u32(const std::string& buf, std::size_t at) {
  std::uint32_t bits;
  std::memcpy(&bits, buf.data() + at, 4);
  return to_little(bits);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw io_error("short write to " + path.string());
}

// Checks that a binary payload holds exactly `expected` bytes.
inline void expect_size(const std::string& bytes, std::size_t expected, const std::string& what) {
  if (bytes.size() < expected)
    throw parse_error(what + ": truncated, expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(bytes.size()),
                      bytes.size());
  if (bytes.size() > expected)
    throw parse_error(what + ": trailing data after " + std::to_string(expected) + " bytes", expected);
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error(path.filename().string() + ": " + e.what(), e.byte);
  }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_file(path, j.dump(2) + "\n");
}

}  // namespace mla::binio
