// Engine lifecycle: index flushing, Control Region snapshots, recovery and
// the background agents that drive them.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <functional>
#include <iostream>

#include "engine.hpp"
#include "walkv/coding.hpp"
#include "walkv/error.hpp"

namespace walkv {

Engine::Engine(DbConfig cfg) : config(std::move(cfg)), fault(config.fault), cache(config.cache_capacity_bytes) {
  if (config.directory.empty()) fail(ErrorCode::kInvalidArgument, "database directory not set");
  std::filesystem::create_directories(config.directory);
  const auto lock_path = config.directory / "LOCK";
  lock_fd = ::open(lock_path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
  if (lock_fd < 0) fail(ErrorCode::kIoError, "open " + lock_path.string() + ": " + std::strerror(errno));
  if (::flock(lock_fd, LOCK_EX | LOCK_NB) != 0) {
    ::close(lock_fd);
    lock_fd = -1;
    fail(ErrorCode::kLockConflict, config.directory.string() + " is already open");
  }
  try {
    value_wal = std::make_unique<Wal>(config.directory / "value-wal", config.value_wal, fault, "value");
    index_wal = std::make_unique<Wal>(config.directory / "index-wal", config.index_wal, fault, "index");
    control = std::make_unique<ControlFile>(config.directory / "CONTROL", fault);
    table = std::make_unique<LargeTable>(config.keyspaces, this);
  } catch (...) {
    ::close(lock_fd);
    lock_fd = -1;
    throw;
  }
}

Engine::~Engine() {
  stop_background();
  release_lock();
}

void Engine::release_lock() {
  if (lock_fd >= 0) ::close(lock_fd);
  lock_fd = -1;
}

std::mutex& Engine::flush_lock(const CellRef& cell) {
  const size_t h = std::hash<std::string>{}(cell.cell_key) * 31 + cell.keyspace;
  return flush_locks[h % flush_locks.size()];
}

std::optional<uint64_t> Engine::probe(WalPosition index_pos, const IndexKey& key, size_t skip_prefix) {
  char header[kFrameHeaderSize];
  index_wal->read_raw(index_pos, header, sizeof(header));
  const uint32_t payload_len = decode_fixed32(header + 4);
  const uint16_t key_len = decode_fixed16(header + 10);
  if (payload_len < 4u + key_len || (payload_len - 4 - key_len) % kIndexEntrySize != 0) {
    fail(ErrorCode::kCorruption, "bad index frame at " + std::to_string(index_pos.offset));
  }
  const uint64_t len = payload_len - 4 - key_len;
  WalRegionSource source(*index_wal, index_pos.offset + kFrameHeaderSize + key_len, len);
  const LookupOutcome out = optimistic_lookup(source, len / kIndexEntrySize, key, config.window, skip_prefix);
  m.index_store_reads.fetch_add(1 + out.iterations, std::memory_order_relaxed);
  if (out.iterations > 0) {
    m.optimistic_iterations[std::min<size_t>(out.iterations, 8) - 1].fetch_add(1, std::memory_order_relaxed);
  }
  return out.position;
}

std::vector<IndexEntry> Engine::load(WalPosition index_pos) {
  const WalRecord rec = index_wal->read_at(index_pos);
  m.index_store_reads.fetch_add(1, std::memory_order_relaxed);
  return deserialize_flat(rec.value);
}

// ---------------------------------------------------------------------------
// Recovery

void Engine::recover() {
  const auto region = control->read();
  const ControlRegion r = region.value_or(ControlRegion{});
  recovery.control_found = region.has_value();
  recovery.control_generation = r.generation;
  generation = r.generation;
  gc_watermark.store(r.gc_watermark.offset);

  // Index frames past the newest one the snapshot references are orphans.
  uint64_t index_tail = index_wal->first_position().offset;
  for (const auto& c : r.cells) {
    size_t len = 0;
    index_wal->read_at(c.flushed_index_pos, &len);
    index_tail = std::max(index_tail, c.flushed_index_pos.offset + len);
    table->restore_cell(c.cell, c.flushed_index_pos, c.replay_pos);
  }
  index_wal->reset_tail(WalPosition(index_tail));
  recovery.index_tail = WalPosition(index_tail);

  const WalPosition start = std::max({r.global_replay_from, r.gc_watermark, value_wal->first_position()});
  recovery.replay_from = start;

  auto replay_one = [&](const WalEntry& e) {
    const WalRecord& rec = e.record;
    if (rec.key.size() != kIndexKeySize) fail(ErrorCode::kCorruption, "log frame with a malformed key");
    const IndexKey key = make_index_key(rec.key);
    if (e.position < table->replay_pos(rec.keyspace, key)) {
      ++recovery.frames_skipped;
      return;
    }
    switch (rec.kind) {
      case RecordKind::kPut:
      case RecordKind::kTombstone:
        table->apply(rec.keyspace, IndexUpdate{key, e.position, rec.kind == RecordKind::kTombstone});
        break;
      case RecordKind::kRelocated:
        table->apply_relocated(rec.keyspace, IndexUpdate{key, e.position, rec.deletes_key()}, rec.relocated_from(),
                               WalPosition::none());
        break;
      case RecordKind::kBatchStart:
        fail(ErrorCode::kCorruption, "nested batch marker");
    }
    ++recovery.frames_replayed;
  };

  uint64_t tail = start.offset;
  auto it = value_wal->replay_from(start);
  while (auto e = it.next()) {
    if (e->record.kind != RecordKind::kBatchStart) {
      replay_one(*e);
      tail = e->position.offset + e->frame_len;
      continue;
    }
    const uint32_t count = e->record.batch_count();
    std::vector<WalEntry> members;
    uint64_t expect = e->position.offset + e->frame_len;
    while (members.size() < count) {
      auto member = it.next();
      if (!member || member->position.offset != expect || member->record.kind == RecordKind::kBatchStart) break;
      expect += member->frame_len;
      members.push_back(std::move(*member));
    }
    if (members.size() < count) {
      // A batch that did not fully reach the log is the crash point.
      ++recovery.batches_discarded;
      break;
    }
    ++recovery.frames_replayed;
    for (const auto& member : members) replay_one(member);
    tail = expect;
  }
  value_wal->reset_tail(WalPosition(tail));
  recovery.value_tail = WalPosition(tail);
  acked_end.store(tail);
  last_snapshot_processed = start.offset;
}

// ---------------------------------------------------------------------------
// Flushing

bool Engine::run_flush(const CellRef& cell) {
  std::lock_guard flush_guard(flush_lock(cell));
  auto job = table->begin_flush(cell, value_wal->last_processed());
  if (!job) return false;
  fault_point(fault, "flush.begun");

  std::vector<IndexEntry> loaded_base;
  const std::vector<IndexEntry>* base = job->base.get();
  if (base == nullptr) {
    if (!job->prior_index.is_none()) loaded_base = load(job->prior_index);
    base = &loaded_base;
  }

  // Tombstones whose frame lies below the GC watermark mask nothing any more.
  const uint64_t watermark = gc_watermark.load();
  auto keep = [&](const IndexEntry& e) { return !e.tombstone() || e.wal_position().offset >= watermark; };
  std::vector<IndexEntry> merged;
  merged.reserve(base->size() + job->entries.size());
  auto bi = base->begin();
  for (const auto& e : job->entries) {
    for (; bi != base->end() && bi->key < e.key; ++bi) {
      if (keep(*bi)) merged.push_back(*bi);
    }
    if (bi != base->end() && bi->key == e.key) ++bi;
    if (keep(e)) merged.push_back(e);
  }
  for (; bi != base->end(); ++bi) {
    if (keep(*bi)) merged.push_back(*bi);
  }

  const std::string frame = WalRecord::put(cell.keyspace, cell.cell_key, serialize_flat(merged)).encode();
  const WalPosition pos = index_wal->allocate(frame.size());
  index_wal->write_bytes_at(pos, frame);
  index_wal->mark_processed(pos, frame.size());
  fault_point(fault, "flush.written");
  m.index_bytes_written.fetch_add(frame.size(), std::memory_order_relaxed);
  m.flushes.fetch_add(1, std::memory_order_relaxed);

  const bool completed = table->complete_flush(cell, *job, pos, &merged);
  fault_point(fault, "flush.completed");
  return completed;
}

size_t Engine::flush_dirty(bool all) {
  size_t flushed = 0;
  for (const auto& info : table->dirty_cells()) {
    if (!all && info.entries < info.threshold) continue;
    if (run_flush(info.cell)) ++flushed;
  }
  return flushed;
}

// ---------------------------------------------------------------------------
// Snapshots

uint64_t Engine::write_snapshot() {
  std::lock_guard lock(snapshot_mu);
  fault_point(fault, "snapshot.begin");
  const WalPosition processed = value_wal->last_processed();
  const TableMetadata md = table->snapshot_metadata(processed);
  ControlRegion region;
  region.generation = generation + 1;
  region.global_replay_from = md.global_replay_from;
  region.gc_watermark = WalPosition(gc_watermark.load());
  region.cells = md.cells;

  // Everything the region points at must be durable before the region is.
  value_wal->sync();
  fault_point(fault, "snapshot.value_synced");
  index_wal->sync();
  fault_point(fault, "snapshot.index_synced");
  control->write(region);
  fault_point(fault, "snapshot.written");
  generation = region.generation;
  last_snapshot_processed = processed.offset;
  m.snapshots.fetch_add(1, std::memory_order_relaxed);
  return generation;
}

// ---------------------------------------------------------------------------
// Background agents

namespace {

template <typename Fn>
void guarded(const char* who, Fn&& fn) {
  try {
    fn();
  } catch (const SimulatedCrash&) {
    throw;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kBusy && e.code() != ErrorCode::kClosed) {
      std::cerr << "walkv " << who << ": " << e.what() << "\n";
    }
  }
}

}  // namespace

void Engine::start_background() {
  value_wal->start_background_sync();
  index_wal->start_background_sync();
  const size_t workers = std::max<size_t>(1, config.flusher_threads);
  for (size_t i = 0; i < workers; ++i) threads.emplace_back([this, i] { flusher_loop(i); });
  threads.emplace_back([this] { snapshot_loop(); });
  if (config.relocation_enabled) threads.emplace_back([this] { relocator_loop(); });
}

void Engine::stop_background() {
  {
    std::lock_guard lock(bg_mu);
    bg_stop = true;
  }
  bg_cv.notify_all();
  for (auto& t : threads) {
    if (t.joinable()) t.join();
  }
  threads.clear();
  if (value_wal) value_wal->stop_background();
  if (index_wal) index_wal->stop_background();
}

void Engine::flusher_loop(size_t worker) {
  const size_t workers = std::max<size_t>(1, config.flusher_threads);
  std::unique_lock lock(bg_mu);
  while (!bg_cv.wait_for(lock, std::chrono::milliseconds(20), [this] { return bg_stop; })) {
    lock.unlock();
    try {
      guarded("flusher", [&] {
        auto cells = table->dirty_cells();
        std::sort(cells.begin(), cells.end(),
                  [](const DirtyCellInfo& a, const DirtyCellInfo& b) { return a.entries > b.entries; });
        for (const auto& info : cells) {
          if (info.entries < info.threshold) break;
          if (std::hash<std::string>{}(info.cell.cell_key) % workers != worker) continue;
          run_flush(info.cell);
        }
        if (worker == 0) table->evict_to(config.loaded_entry_budget);
      });
    } catch (const SimulatedCrash&) {
      return;
    }
    lock.lock();
  }
}

void Engine::snapshot_loop() {
  std::unique_lock lock(bg_mu);
  while (!bg_cv.wait_for(lock, config.snapshot_interval, [this] { return bg_stop; })) {
    lock.unlock();
    try {
      guarded("snapshot", [&] {
        // Cells that stayed dirty since the previous snapshot would pin the
        // replay start; flush them so recovery stays short.
        for (const auto& info : table->dirty_cells()) {
          if (info.oldest.offset < last_snapshot_processed) run_flush(info.cell);
        }
        write_snapshot();
      });
    } catch (const SimulatedCrash&) {
      return;
    }
    lock.lock();
  }
}

void Engine::relocator_loop() {
  std::unique_lock lock(bg_mu);
  while (!bg_cv.wait_for(lock, std::chrono::seconds(1), [this] { return bg_stop; })) {
    lock.unlock();
    try {
      guarded("relocator", [&] {
        const uint64_t size = value_wal->tail().offset - value_wal->first_position().offset;
        const auto dead = static_cast<double>(dead_bytes.load());
        if (size > 0 && dead > config.relocation_dead_ratio * static_cast<double>(size)) {
          dead_bytes.store(0);
          relocate(config.relocation);
        }
      });
    } catch (const SimulatedCrash&) {
      return;
    }
    lock.lock();
  }
}

}  // namespace walkv
