#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include "walkv/index_format.hpp"

namespace walkv::testing {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "walkv-test-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) std::abort();
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& sub) const { return path_ / sub; }

 private:
  std::filesystem::path path_;
};

inline IndexKey random_key(std::mt19937_64& rng) {
  IndexKey k;
  for (size_t i = 0; i < k.size(); i += 8) {
    const uint64_t w = rng();
    std::memcpy(k.data() + i, &w, 8);
  }
  return k;
}

inline std::string random_key_string(std::mt19937_64& rng) { return std::string(key_view(random_key(rng))); }

inline std::string random_value(std::mt19937_64& rng, size_t n) {
  std::string v(n, '\0');
  for (auto& c : v) c = static_cast<char>(rng());
  return v;
}

/// Simulates losing the OS page cache: every log byte at or past synced is
/// zeroed. Call after the log object is gone.
inline void drop_unsynced(const std::filesystem::path& dir, uint64_t fragment_size, uint64_t synced) {
  for (const auto& de : std::filesystem::directory_iterator(dir)) {
    const std::string name = de.path().filename().string();
    if (name.size() != 20 || name.substr(16) != ".wal") continue;
    const uint64_t start = std::stoull(name.substr(0, 16), nullptr, 16);
    if (start + fragment_size <= synced) continue;
    const uint64_t keep = synced > start ? synced - start : 0;
    const int fd = ::open(de.path().c_str(), O_RDWR);
    if (fd < 0) std::abort();
    if (::ftruncate(fd, static_cast<off_t>(keep)) != 0 || ::ftruncate(fd, static_cast<off_t>(fragment_size)) != 0) {
      std::abort();
    }
    ::close(fd);
  }
}

/// Overwrites bytes of a file in place.
inline void poke(const std::filesystem::path& file, uint64_t offset, const std::string& bytes) {
  const int fd = ::open(file.c_str(), O_RDWR);
  if (fd < 0) std::abort();
  if (::pwrite(fd, bytes.data(), bytes.size(), static_cast<off_t>(offset)) != static_cast<ssize_t>(bytes.size())) {
    std::abort();
  }
  ::close(fd);
}

inline std::string peek(const std::filesystem::path& file, uint64_t offset, size_t n) {
  std::string out(n, '\0');
  const int fd = ::open(file.c_str(), O_RDONLY);
  if (fd < 0) std::abort();
  if (::pread(fd, out.data(), n, static_cast<off_t>(offset)) != static_cast<ssize_t>(n)) std::abort();
  ::close(fd);
  return out;
}

/// Bitwise CRC-32 (ISO-HDLC, reflected 0xEDB88320), independent of zlib.
inline uint32_t reference_crc32(std::string_view data) {
  uint32_t crc = 0xffffffffu;
  for (unsigned char c : data) {
    crc ^= c;
    for (int i = 0; i < 8; ++i) crc = (crc >> 1) ^ (0xedb88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

}  // namespace walkv::testing
