#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsp {

// Error taxonomy. Argument errors are programming mistakes at call sites,
// config errors are bad user-supplied settings, the rest are runtime events.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error("config: " + m) {}
};
struct ArgumentError : std::invalid_argument {
  explicit ArgumentError(const std::string& m) : std::invalid_argument("argument: " + m) {}
};
struct SamplingError : std::runtime_error {
  explicit SamplingError(const std::string& m) : std::runtime_error("sampling: " + m) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error("numeric: " + m) {}
};
struct IntegrityError : std::runtime_error {
  explicit IntegrityError(const std::string& m) : std::runtime_error("integrity: " + m) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error("io: " + m) {}
};

// FNV-1a 64-bit. Used for stream derivation, artifact hashes and parameter
// checksums; not cryptographic.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

template <typename T>
std::uint64_t checksum(const std::vector<T>& v) {
  return fnv1a64(v.data(), v.size() * sizeof(T));
}

inline std::string hex64(std::uint64_t h) {
  static const char* d = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = d[h & 0xf];
    h >>= 4;
  }
  return s;
}

}  // namespace rsp
