// Shared error types, constants and small utilities used across the library.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace varest {

// Annotation value marking a frame without ground truth.
inline constexpr double kSentinel = -5.0;

inline bool is_sentinel(double v) { return v == kSentinel; }

// Input data failed a contract (bad label range, shape mismatch, ...).
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// A text input could not be parsed. Carries a 1-based line number when known.
struct ParseError : std::runtime_error {
  int line = 0;
  ParseError(const std::string& msg, int line_no)
      : std::runtime_error("line " + std::to_string(line_no) + ": " + msg),
        line(line_no) {}
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// A configuration value is out of range or inconsistent.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem-level failure (missing file, write refused, ...).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// splitmix64; used to derive independent RNG streams from (seed, index) pairs.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Shortest decimal form that round-trips an IEEE double exactly.
inline std::string format_exact(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Fixed-precision form used by annotation and report files.
inline std::string format_fixed(double v, int digits = 6) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

inline bool label_in_range(double v) {
  return (v >= -1.0 && v <= 1.0) || is_sentinel(v);
}

}  // namespace varest
