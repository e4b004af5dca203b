#include "memfield/common.hpp"

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace memfield {

namespace {

// splitmix64, used to decorrelate seed/stream pairs before seeding mt19937_64
std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed ^ (0xa5a5a5a55a5a5a5aULL * (stream + 1));
  std::array<std::uint64_t, 4> key{};
  for (auto& k : key) k = splitmix64(x);
  std::seed_seq seq(key.begin(), key.end());
  return Rng(seq);
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + tmp);
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw DataError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace memfield
