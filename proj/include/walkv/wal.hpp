#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <thread>

#include "walkv/fault.hpp"
#include "walkv/file.hpp"
#include "walkv/position.hpp"

namespace walkv {

enum class RecordKind : uint8_t {
  kPut = 1,
  kTombstone = 2,
  kBatchStart = 3,
  // A copy written by relocation. Its value is the original position (8B),
  // a tombstone flag (1B) and the original value; replay applies it only if
  // the key still points at the original position.
  kRelocated = 4,
};

// crc(4) | payload_len(4) | kind(1) | keyspace(1) | key_len(2) | key | value
inline constexpr size_t kFrameHeaderSize = 12;
inline constexpr size_t kMaxKeySize = 0xffff;

struct WalRecord {
  RecordKind kind = RecordKind::kPut;
  uint8_t keyspace = 0;
  std::string key;
  std::string value;

  static WalRecord put(uint8_t keyspace, std::string_view key, std::string_view value);
  static WalRecord tombstone(uint8_t keyspace, std::string_view key);
  static WalRecord batch_start(uint32_t count);
  static WalRecord relocated(uint8_t keyspace, std::string_view key, WalPosition original,
                             const std::optional<std::string_view>& value);

  size_t encoded_size() const { return kFrameHeaderSize + key.size() + value.size(); }
  void encode_to(std::string& out) const;
  std::string encode() const;

  uint32_t batch_count() const;
  WalPosition relocated_from() const;
  /// True for tombstones and relocated tombstones.
  bool deletes_key() const;
  /// The user value carried by a Put or a relocated Put.
  std::string_view user_value() const;

  friend bool operator==(const WalRecord&, const WalRecord&) = default;
};

enum class FrameStatus { kOk, kZero, kTruncated, kCorrupt };

/// Decodes one frame from the start of buf. kZero means an all-zero header
/// (unwritten space); kTruncated means buf ends before the frame does.
FrameStatus decode_frame(std::string_view buf, WalRecord* out, size_t* frame_len);

struct WalConfig {
  uint64_t fragment_size = 64ull << 20;
  uint32_t prealloc_fragments = 2;
  std::chrono::milliseconds sync_interval{200};
};

/// Tracks which allocated ranges are fully processed and reports the highest
/// offset below which everything is processed.
class PositionTracker {
 public:
  explicit PositionTracker(uint64_t base = 0) : contiguous_(base) {}

  void mark(uint64_t start, uint64_t end);
  uint64_t last_processed() const { return contiguous_.load(std::memory_order_acquire); }
  void reset(uint64_t base);
  size_t pending_ranges() const;

 private:
  mutable std::mutex mu_;
  std::map<uint64_t, uint64_t> pending_;  // start -> end, disjoint, all above contiguous_
  std::atomic<uint64_t> contiguous_;
};

struct WalEntry {
  WalPosition position;
  WalRecord record;
  size_t frame_len = 0;
};

class Wal;

/// Sequential frame reader. Skips zeroed fragment tails; stops at the first
/// torn or corrupt frame.
class WalIterator {
 public:
  WalIterator(const Wal& wal, uint64_t start, uint64_t limit);

  std::optional<WalEntry> next();
  /// Offset just past the last frame yielded.
  WalPosition end_position() const { return WalPosition(end_); }
  /// True when iteration ended at the limit rather than at a torn or
  /// missing frame.
  bool reached_limit() const { return cursor_ >= limit_; }

 private:
  bool fill(uint64_t at, size_t need);

  const Wal* wal_;
  uint64_t cursor_;
  uint64_t limit_;
  uint64_t end_;
  std::string buf_;
  uint64_t buf_start_ = 0;
  bool done_ = false;
};

/// Append-only, position-addressed log split into fixed-size fragment files.
/// Used both for values and for serialized indices.
class Wal {
 public:
  Wal(std::filesystem::path dir, WalConfig config, FaultInjector* fault = nullptr, std::string tag = "wal");
  ~Wal();
  Wal(const Wal&) = delete;
  Wal& operator=(const Wal&) = delete;

  const WalConfig& config() const { return config_; }
  const std::filesystem::path& directory() const { return dir_; }

  WalPosition allocate(size_t record_len);
  void write_at(WalPosition position, const WalRecord& record);
  /// Writes pre-encoded frames covering one allocation.
  void write_bytes_at(WalPosition position, std::string_view frames);

  WalRecord read_at(WalPosition position, size_t* frame_len = nullptr) const;
  void read_raw(WalPosition position, char* out, size_t len) const;

  void mark_processed(WalPosition position, size_t record_len);
  WalPosition last_processed() const { return WalPosition(tracker_.last_processed()); }
  WalPosition tail() const { return WalPosition(tail_.load(std::memory_order_acquire)); }
  WalPosition synced() const { return WalPosition(synced_.load(std::memory_order_acquire)); }
  /// Lowest offset that has not been garbage collected.
  WalPosition first_position() const;

  /// Makes every frame below last_processed() (at call time) durable.
  void sync();

  WalIterator replay_from(WalPosition position, WalPosition limit = WalPosition::none()) const {
    return WalIterator(*this, position.offset, limit.offset);
  }

  /// Deletes every fragment lying wholly below position.
  size_t gc_before(WalPosition position);

  /// Recovery: sets the allocation cursor, zeroes anything past it and syncs
  /// what remains.
  void reset_tail(WalPosition position);

  void start_background_sync();
  void stop_background();
  /// Rejects further allocations.
  void close();
  bool closed() const { return closed_.load(); }

  uint64_t disk_bytes() const;
  size_t fragment_count() const;

  // Test hook: fragments with their starting offsets.
  std::map<uint64_t, std::filesystem::path> fragment_files() const;

 private:
  friend class WalIterator;

  struct Fragment {
    uint64_t index;
    File file;
  };

  std::shared_ptr<Fragment> fragment(uint64_t index) const;
  std::shared_ptr<Fragment> fragment_for(uint64_t offset) const;
  void ensure_fragments(uint64_t index);
  std::filesystem::path fragment_path(uint64_t index) const;
  void check_range(uint64_t offset, size_t len) const;

  std::filesystem::path dir_;
  WalConfig config_;
  FaultInjector* fault_;
  std::string tag_;

  std::atomic<uint64_t> tail_{0};
  std::atomic<uint64_t> synced_{0};
  std::atomic<uint64_t> gc_floor_{0};
  std::atomic<int64_t> highest_created_{-1};
  std::atomic<bool> closed_{false};
  PositionTracker tracker_;

  mutable std::shared_mutex fragments_mu_;
  std::map<uint64_t, std::shared_ptr<Fragment>> fragments_;
  std::mutex create_mu_;
  std::mutex sync_mu_;
  std::atomic<bool> dir_dirty_{false};

  std::mutex bg_mu_;
  std::condition_variable bg_cv_;
  bool bg_stop_ = false;
  std::thread syncer_;
};

}  // namespace walkv
