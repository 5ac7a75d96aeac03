#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "walkv/fault.hpp"
#include "walkv/index_format.hpp"
#include "walkv/large_table.hpp"
#include "walkv/relocation.hpp"
#include "walkv/wal.hpp"

namespace walkv {

enum class Durability {
  kAcknowledged,  // returns once the frame is in the page cache
  kSynced,        // returns once the frame is fsynced
};

struct DbConfig {
  std::filesystem::path directory;
  std::vector<KeySpaceConfig> keyspaces{KeySpaceConfig::uniform(0)};
  WalConfig value_wal;
  WalConfig index_wal;
  WindowConfig window;
  size_t cache_capacity_bytes = 256ull << 20;
  size_t flusher_threads = 1;
  std::chrono::milliseconds snapshot_interval{5000};
  Durability durability = Durability::kAcknowledged;
  /// Loaded flushed-index entries kept resident before clean cells are evicted.
  size_t loaded_entry_budget = 4u << 20;

  RelocationConfig relocation;
  /// Background relocator: runs a pass when the estimated dead fraction of the
  /// value log exceeds relocation_dead_ratio.
  bool relocation_enabled = false;
  double relocation_dead_ratio = 0.3;

  /// false: no background threads; flushes, snapshots and relocation run
  /// only when called. Used for deterministic crash tests.
  bool background = true;
  FaultInjector* fault = nullptr;
};

struct Metrics {
  uint64_t wal_bytes_written = 0;       // value log, including relocation
  uint64_t logical_bytes_ingested = 0;  // key + value of every user write
  uint64_t index_bytes_written = 0;     // index store frames
  uint64_t value_wal_reads = 0;         // foreground value reads
  uint64_t index_store_reads = 0;       // reads issued against flushed indices
  uint64_t bloom_negative_hits = 0;
  uint64_t cache_hits = 0;
  uint64_t cache_misses = 0;
  uint64_t relocated_entries = 0;
  uint64_t relocation_bytes_written = 0;
  uint64_t relocation_value_reads = 0;
  uint64_t cas_rejections = 0;
  uint64_t flushes = 0;
  uint64_t snapshots = 0;
  uint64_t writes = 0;
  uint64_t deletes = 0;
  uint64_t batches = 0;
  /// Optimistic lookups by window iterations: [i] counts i+1 iterations,
  /// the last bucket everything beyond.
  std::array<uint64_t, 8> optimistic_iterations{};
};

struct RecoveryStats {
  bool control_found = false;
  uint64_t control_generation = 0;
  WalPosition replay_from{0};
  WalPosition value_tail{0};
  WalPosition index_tail{0};
  uint64_t frames_replayed = 0;
  uint64_t frames_skipped = 0;
  uint64_t batches_discarded = 0;
};

class WriteBatch {
 public:
  struct Op {
    uint8_t keyspace;
    std::string key;
    std::optional<std::string> value;  // empty: delete
  };

  void put(uint8_t ks, std::string_view key, std::string_view value) {
    ops_.push_back(Op{ks, std::string(key), std::string(value)});
  }
  void del(uint8_t ks, std::string_view key) { ops_.push_back(Op{ks, std::string(key), std::nullopt}); }
  const std::vector<Op>& ops() const { return ops_; }
  size_t size() const { return ops_.size(); }
  bool empty() const { return ops_.empty(); }
  void clear() { ops_.clear(); }

 private:
  std::vector<Op> ops_;
};

struct Engine;

/// Embedded key-value store. Keys are exactly 32 bytes. All methods are safe
/// to call from any number of threads.
class Db {
 public:
  static std::unique_ptr<Db> open(DbConfig config);
  ~Db();
  Db(const Db&) = delete;
  Db& operator=(const Db&) = delete;

  void put(uint8_t ks, std::string_view key, std::string_view value);
  void del(uint8_t ks, std::string_view key);
  void write_batch(const WriteBatch& batch);

  std::optional<std::string> get(uint8_t ks, std::string_view key);
  bool exists(uint8_t ks, std::string_view key);
  /// Largest live key strictly below key, with its value.
  std::optional<std::pair<std::string, std::string>> less_than(uint8_t ks, std::string_view key);

  /// Returns once every write acknowledged before the call is fsynced.
  void flush_durability();

  RelocationResult trigger_relocation(const std::optional<RelocationConfig>& override_config = std::nullopt);
  WalPosition min_required_position() const;

  Metrics metrics() const;
  RecoveryStats recovery_stats() const;
  void close();

  // Maintenance entry points, run by background threads in normal operation.
  size_t flush_dirty_cells();
  uint64_t write_snapshot();
  size_t evict_cells(size_t budget);

  const DbConfig& config() const;
  LargeTable& table();
  const Wal& value_wal() const;
  const Wal& index_wal() const;

 private:
  explicit Db(std::unique_ptr<Engine> engine);
  std::unique_ptr<Engine> engine_;
};

}  // namespace walkv
