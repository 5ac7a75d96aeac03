#include "walkv/file.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <utility>

#include "walkv/error.hpp"

namespace walkv {

namespace {

[[noreturn]] void io_fail(const std::string& what, const std::filesystem::path& path) {
  fail(ErrorCode::kIoError, what + " " + path.string() + ": " + std::strerror(errno));
}

}  // namespace

File::File(int fd, std::filesystem::path path, FaultInjector* fault, std::string tag)
    : fd_(fd), path_(std::move(path)), fault_(fault), tag_(std::move(tag)) {}

File::~File() { close(); }

File::File(File&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)),
      path_(std::move(other.path_)),
      fault_(other.fault_),
      tag_(std::move(other.tag_)) {}

File& File::operator=(File&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
    path_ = std::move(other.path_);
    fault_ = other.fault_;
    tag_ = std::move(other.tag_);
  }
  return *this;
}

File File::open_existing(const std::filesystem::path& path, FaultInjector* fault, std::string tag) {
  const int fd = ::open(path.c_str(), O_RDWR | O_CLOEXEC);
  if (fd < 0) io_fail("open", path);
  return File(fd, path, fault, std::move(tag));
}

File File::create(const std::filesystem::path& path, FaultInjector* fault, std::string tag) {
  if (fault != nullptr) fault->hit("io.create." + tag);
  const int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) io_fail("create", path);
  return File(fd, path, fault, std::move(tag));
}

void File::write_at(uint64_t offset, const char* data, size_t n) {
  if (fault_ != nullptr && fault_->hit_torn("io.write." + tag_)) {
    // Torn write: only a prefix makes it to the page cache.
    const size_t prefix = n / 2;
    if (prefix > 0 && ::pwrite(fd_, data, prefix, static_cast<off_t>(offset)) < 0) {
      // the crash below is reported either way
    }
    fault_->crash("io.write." + tag_);
  }
  while (n > 0) {
    const ssize_t w = ::pwrite(fd_, data, n, static_cast<off_t>(offset));
    if (w < 0) {
      if (errno == EINTR) continue;
      io_fail("pwrite", path_);
    }
    data += w;
    n -= static_cast<size_t>(w);
    offset += static_cast<uint64_t>(w);
  }
}

size_t File::read_at(uint64_t offset, char* data, size_t n) const {
  size_t total = 0;
  while (total < n) {
    const ssize_t r = ::pread(fd_, data + total, n - total, static_cast<off_t>(offset + total));
    if (r < 0) {
      if (errno == EINTR) continue;
      io_fail("pread", path_);
    }
    if (r == 0) break;
    total += static_cast<size_t>(r);
  }
  return total;
}

void File::read_exact(uint64_t offset, char* data, size_t n) const {
  if (read_at(offset, data, n) != n) {
    fail(ErrorCode::kOutOfRange, "short read at " + std::to_string(offset) + " in " + path_.string());
  }
}

void File::sync() {
  if (fault_ != nullptr) fault_->hit("io.sync." + tag_);
  if (::fdatasync(fd_) != 0) io_fail("fdatasync", path_);
}

void File::truncate(uint64_t size) {
  if (fault_ != nullptr) fault_->hit("io.truncate." + tag_);
  if (::ftruncate(fd_, static_cast<off_t>(size)) != 0) io_fail("ftruncate", path_);
}

uint64_t File::size() const {
  struct stat st {};
  if (::fstat(fd_, &st) != 0) io_fail("fstat", path_);
  return static_cast<uint64_t>(st.st_size);
}

uint64_t File::allocated_bytes() const {
  struct stat st {};
  if (::fstat(fd_, &st) != 0) io_fail("fstat", path_);
  return static_cast<uint64_t>(st.st_blocks) * 512;
}

void File::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void sync_directory(const std::filesystem::path& dir, FaultInjector* fault) {
  if (fault != nullptr) fault->hit("io.syncdir");
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (fd < 0) io_fail("open dir", dir);
  const int rc = ::fsync(fd);
  ::close(fd);
  if (rc != 0) io_fail("fsync dir", dir);
}

void remove_file(const std::filesystem::path& path, FaultInjector* fault, const std::string& tag) {
  if (fault != nullptr) fault->hit("io.remove." + tag);
  if (::unlink(path.c_str()) != 0 && errno != ENOENT) io_fail("unlink", path);
}

}  // namespace walkv
