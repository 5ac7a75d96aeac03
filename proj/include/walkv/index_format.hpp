#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "walkv/file.hpp"
#include "walkv/position.hpp"

namespace walkv {

inline constexpr size_t kIndexKeySize = 32;
inline constexpr size_t kIndexEntrySize = 40;
inline constexpr size_t kHeaderBuckets = 128;
inline constexpr size_t kHeaderSize = kHeaderBuckets * 8;

using IndexKey = std::array<uint8_t, kIndexKeySize>;

IndexKey make_index_key(std::string_view bytes);
inline std::string_view key_view(const IndexKey& k) {
  return {reinterpret_cast<const char*>(k.data()), k.size()};
}

/// Positions stored in persistent indices reserve the top bit to mark a
/// tombstone, so deletes survive a merge with an older on-disk index.
inline constexpr uint64_t kTombstoneBit = 1ull << 63;

struct IndexEntry {
  IndexKey key{};
  uint64_t position = 0;  // raw; may carry kTombstoneBit

  bool tombstone() const { return (position & kTombstoneBit) != 0; }
  WalPosition wal_position() const { return WalPosition(position & ~kTombstoneBit); }

  friend bool operator==(const IndexEntry&, const IndexEntry&) = default;
};

inline uint64_t encode_index_position(WalPosition p, bool tombstone) {
  return p.offset | (tombstone ? kTombstoneBit : 0);
}

struct WindowConfig {
  size_t window_entries = 800;
};

/// Random-access read-only byte source. Counts the reads it serves.
class ByteSource {
 public:
  virtual ~ByteSource() = default;
  virtual uint64_t size() const = 0;
  void read(uint64_t offset, std::span<char> out) const {
    reads_.fetch_add(1, std::memory_order_relaxed);
    bytes_read_.fetch_add(out.size(), std::memory_order_relaxed);
    do_read(offset, out);
  }
  uint64_t reads() const { return reads_.load(); }
  uint64_t bytes_read() const { return bytes_read_.load(); }

 protected:
  virtual void do_read(uint64_t offset, std::span<char> out) const = 0;

 private:
  mutable std::atomic<uint64_t> reads_{0};
  mutable std::atomic<uint64_t> bytes_read_{0};
};

class MemorySource final : public ByteSource {
 public:
  explicit MemorySource(std::string_view data) : data_(data) {}
  uint64_t size() const override { return data_.size(); }

 protected:
  void do_read(uint64_t offset, std::span<char> out) const override;

 private:
  std::string_view data_;
};

/// A region [base, base+length) of a file.
class FileRegionSource final : public ByteSource {
 public:
  FileRegionSource(const File& file, uint64_t base, uint64_t length) : file_(&file), base_(base), length_(length) {}
  uint64_t size() const override { return length_; }

 protected:
  void do_read(uint64_t offset, std::span<char> out) const override;

 private:
  const File* file_;
  uint64_t base_;
  uint64_t length_;
};

struct LookupOutcome {
  std::optional<uint64_t> position;  // raw entry position
  uint32_t iterations = 0;
};

std::string serialize_flat(std::span<const IndexEntry> entries);
std::vector<IndexEntry> load_all(const ByteSource& source);
std::vector<IndexEntry> deserialize_flat(std::string_view bytes);

/// floor(key / 2^256 * n) clamped to [0, n-1], using the 8 key bytes that
/// follow skip_prefix as a 64-bit fraction.
uint64_t estimate_entry_index(std::span<const uint8_t> key, uint64_t n, size_t skip_prefix = 0);

/// Window search starting at the distribution-based estimate. skip_prefix
/// names a leading key prefix shared by every entry (prefix key spaces),
/// which carries no positional information.
LookupOutcome optimistic_lookup(const ByteSource& source, uint64_t n, const IndexKey& key,
                                const WindowConfig& cfg = {}, size_t skip_prefix = 0);

/// Binary search over a fully loaded array; the reference result.
std::optional<uint64_t> binary_search_entries(std::span<const IndexEntry> entries, const IndexKey& key);

std::string serialize_header(std::span<const IndexEntry> entries);
inline size_t header_bucket(const IndexKey& key) { return key[0] >> 1; }

struct HeaderLookupOutcome {
  std::optional<uint64_t> position;
  uint32_t reads = 0;
};

HeaderLookupOutcome header_lookup(const ByteSource& source, const IndexKey& key);

}  // namespace walkv
