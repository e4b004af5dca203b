#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace memfield {

// Error taxonomy mirrored by CLI exit codes: config=2, data=3, numeric=4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// Derives an independent RNG stream from a base seed and a stream tag.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

/// FNV-1a 64-bit hash, used for manifest/config hashing (stable across runs).
std::uint64_t fnv1a64(std::string_view data);

/// Writes via a temp file and rename, so partial outputs never appear.
void atomic_write(const std::string& path, const std::string& content);

std::string to_hex(std::uint64_t v);

}  // namespace memfield
