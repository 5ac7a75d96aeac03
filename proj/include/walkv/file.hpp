#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "walkv/fault.hpp"

namespace walkv {

/// Owning wrapper over a POSIX file descriptor. Every mutation passes through
/// the fault injector (when one is attached) under labels of the form
/// "io.<op>.<tag>".
class File {
 public:
  File() = default;
  ~File();
  File(File&& other) noexcept;
  File& operator=(File&& other) noexcept;
  File(const File&) = delete;
  File& operator=(const File&) = delete;

  static File open_existing(const std::filesystem::path& path, FaultInjector* fault, std::string tag);
  static File create(const std::filesystem::path& path, FaultInjector* fault, std::string tag);

  bool is_open() const { return fd_ >= 0; }
  int fd() const { return fd_; }
  const std::filesystem::path& path() const { return path_; }

  void write_at(uint64_t offset, const char* data, size_t n);
  /// Reads up to n bytes; returns the count actually read (short at EOF).
  size_t read_at(uint64_t offset, char* data, size_t n) const;
  void read_exact(uint64_t offset, char* data, size_t n) const;

  void sync();
  void truncate(uint64_t size);
  uint64_t size() const;
  /// Bytes actually allocated on disk (sparse regions excluded).
  uint64_t allocated_bytes() const;

  void close();

 private:
  File(int fd, std::filesystem::path path, FaultInjector* fault, std::string tag);

  int fd_ = -1;
  std::filesystem::path path_;
  FaultInjector* fault_ = nullptr;
  std::string tag_;
};

void sync_directory(const std::filesystem::path& dir, FaultInjector* fault);
void remove_file(const std::filesystem::path& path, FaultInjector* fault, const std::string& tag);

}  // namespace walkv
