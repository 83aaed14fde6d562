#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mla {

// Violated precondition of a library call (wrong shapes, out-of-range arguments).
class contract_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A file could not be decoded. `offset` is the byte offset at which decoding failed.
class parse_error : public std::runtime_error {
 public:
  parse_error(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// A file decoded fine but its contents contradict the declared schema.
class schema_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite value.
class numeric_error : public std::runtime_error {
 public:
  numeric_error(const std::string& what, std::uint64_t step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}

  std::uint64_t step() const noexcept { return step_; }

 private:
  std::uint64_t step_;
};

namespace detail {

inline void require(bool ok, const char* msg) {
  if (!ok) throw contract_error(msg);
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw contract_error(msg);
}

}  // namespace detail
}  // namespace mla
