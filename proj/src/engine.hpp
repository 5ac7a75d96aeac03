#pragma once

// Internal state shared by db.cpp, maintenance.cpp and relocation.cpp.

#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <thread>
#include <vector>

#include "walkv/control_region.hpp"
#include "walkv/db.hpp"
#include "walkv/value_cache.hpp"

namespace walkv {

struct Counters {
  std::atomic<uint64_t> wal_bytes_written{0};
  std::atomic<uint64_t> logical_bytes_ingested{0};
  std::atomic<uint64_t> index_bytes_written{0};
  std::atomic<uint64_t> value_wal_reads{0};
  std::atomic<uint64_t> index_store_reads{0};
  std::atomic<uint64_t> bloom_negative_hits{0};
  std::atomic<uint64_t> cache_hits{0};
  std::atomic<uint64_t> cache_misses{0};
  std::atomic<uint64_t> relocated_entries{0};
  std::atomic<uint64_t> relocation_bytes_written{0};
  std::atomic<uint64_t> relocation_value_reads{0};
  std::atomic<uint64_t> cas_rejections{0};
  std::atomic<uint64_t> flushes{0};
  std::atomic<uint64_t> snapshots{0};
  std::atomic<uint64_t> writes{0};
  std::atomic<uint64_t> deletes{0};
  std::atomic<uint64_t> batches{0};
  std::array<std::atomic<uint64_t>, 8> optimistic_iterations{};
  std::atomic<uint64_t> frames_written{0};
};

/// Reads a region of a log through read_raw.
class WalRegionSource final : public ByteSource {
 public:
  WalRegionSource(const Wal& wal, uint64_t base, uint64_t length) : wal_(&wal), base_(base), length_(length) {}
  uint64_t size() const override { return length_; }

 protected:
  void do_read(uint64_t offset, std::span<char> out) const override {
    wal_->read_raw(WalPosition(base_ + offset), out.data(), out.size());
  }

 private:
  const Wal* wal_;
  uint64_t base_;
  uint64_t length_;
};

struct Engine final : FlushedIndexReader {
  explicit Engine(DbConfig cfg);
  ~Engine() override;
  void release_lock();

  // FlushedIndexReader
  std::optional<uint64_t> probe(WalPosition index_pos, const IndexKey& key, size_t skip_prefix) override;
  std::vector<IndexEntry> load(WalPosition index_pos) override;

  // maintenance.cpp
  void recover();
  bool run_flush(const CellRef& cell);
  size_t flush_dirty(bool all);
  uint64_t write_snapshot();
  void start_background();
  void stop_background();
  void flusher_loop(size_t worker);
  void snapshot_loop();
  void relocator_loop();

  // relocation.cpp
  RelocationResult relocate(const RelocationConfig& cfg);
  void relocate_wal_based(const RelocationConfig& cfg, WalPosition cutoff, RelocationResult& res);
  void relocate_index_based(const RelocationConfig& cfg, WalPosition cutoff, RelocationResult& res);
  /// Writes the relocated copy and applies it under the compare-and-set rule.
  void rewrite(uint8_t ks, const IndexKey& key, std::string_view value, WalPosition old, RelocationDecision d,
               RelocationResult& res);
  void finalize_relocation(WalPosition watermark, RelocationResult& res);

  // db.cpp
  void note_acknowledged(uint64_t end);
  void wait_durable(uint64_t end);
  std::optional<WalPosition> resolve(uint8_t ks, const IndexKey& key);
  void check_open() const;

  std::mutex& flush_lock(const CellRef& cell);

  DbConfig config;
  FaultInjector* fault;
  int lock_fd = -1;
  std::unique_ptr<Wal> value_wal;
  std::unique_ptr<Wal> index_wal;
  std::unique_ptr<ControlFile> control;
  std::unique_ptr<LargeTable> table;
  ValueCache cache;
  Counters m;
  RecoveryStats recovery;

  std::atomic<uint64_t> gc_watermark{0};
  std::atomic<uint64_t> acked_end{0};
  std::atomic<uint64_t> dead_bytes{0};
  std::atomic<bool> relocation_busy{false};

  std::mutex snapshot_mu;
  uint64_t generation = 0;
  std::atomic<uint64_t> last_snapshot_processed{0};

  std::array<std::mutex, 64> flush_locks;

  /// Foreground operations hold it shared; close() takes it exclusively.
  std::shared_mutex gate;
  std::atomic<bool> closed{false};

  std::mutex bg_mu;
  std::condition_variable bg_cv;
  bool bg_stop = false;
  std::vector<std::thread> threads;
};

}  // namespace walkv
