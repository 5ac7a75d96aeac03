#include "walkv/db.hpp"

#include <thread>

#include "engine.hpp"
#include "walkv/error.hpp"

namespace walkv {

namespace {

constexpr int kMaxRetries = 64;

class OpGuard {
 public:
  explicit OpGuard(Engine& e) : lock_(e.gate) { e.check_open(); }

 private:
  std::shared_lock<std::shared_mutex> lock_;
};

bool retryable(const Error& e) { return e.code() == ErrorCode::kOutOfRange; }

}  // namespace

void Engine::check_open() const {
  if (closed.load(std::memory_order_acquire)) fail(ErrorCode::kClosed, "database closed");
  if (fault != nullptr) fault->check_alive();
}

void Engine::note_acknowledged(uint64_t end) {
  uint64_t cur = acked_end.load(std::memory_order_relaxed);
  while (cur < end && !acked_end.compare_exchange_weak(cur, end, std::memory_order_acq_rel)) {
  }
}

void Engine::wait_durable(uint64_t end) {
  while (value_wal->synced().offset < end) {
    value_wal->sync();
    if (value_wal->synced().offset < end) std::this_thread::yield();
  }
}

std::optional<WalPosition> Engine::resolve(uint8_t ks, const IndexKey& key) {
  for (int attempt = 0;; ++attempt) {
    const TableLookup r = table->lookup(ks, key);
    switch (r.kind) {
      case LookupKind::kFound: return r.position;
      case LookupKind::kTombstoned: return std::nullopt;
      case LookupKind::kAbsent:
        if (r.bloom_rejected) m.bloom_negative_hits.fetch_add(1, std::memory_order_relaxed);
        return std::nullopt;
      case LookupKind::kNeedDiskProbe: break;
    }
    try {
      const auto raw = probe(r.position, key, r.skip_prefix);
      if (!raw || (*raw & kTombstoneBit) != 0) return std::nullopt;
      return WalPosition(*raw);
    } catch (const Error& e) {
      // The index frame was collected after a newer flush replaced it.
      if (!retryable(e) || attempt >= kMaxRetries) throw;
    }
  }
}

Db::Db(std::unique_ptr<Engine> engine) : engine_(std::move(engine)) {}

Db::~Db() {
  try {
    close();
  } catch (...) {
    // A simulated crash or I/O failure during shutdown leaves recovery to the next open.
  }
}

std::unique_ptr<Db> Db::open(DbConfig config) {
  auto engine = std::make_unique<Engine>(std::move(config));
  engine->recover();
  if (engine->config.background) engine->start_background();
  return std::unique_ptr<Db>(new Db(std::move(engine)));
}

void Db::put(uint8_t ks, std::string_view key, std::string_view value) {
  Engine& e = *engine_;
  OpGuard guard(e);
  const IndexKey k = make_index_key(key);
  e.table->keyspace(ks);
  const std::string frame = WalRecord::put(ks, key, value).encode();
  const WalPosition pos = e.value_wal->allocate(frame.size());
  fault_point(e.fault, "db.put.allocated");
  e.value_wal->write_bytes_at(pos, frame);
  fault_point(e.fault, "db.put.written");
  const ApplyOutcome out = e.table->apply(ks, IndexUpdate{k, pos, false});
  fault_point(e.fault, "db.put.applied");
  e.value_wal->mark_processed(pos, frame.size());
  e.cache.update(ks, key, value, pos.offset);
  e.m.wal_bytes_written.fetch_add(frame.size(), std::memory_order_relaxed);
  e.m.logical_bytes_ingested.fetch_add(key.size() + value.size(), std::memory_order_relaxed);
  e.m.writes.fetch_add(1, std::memory_order_relaxed);
  e.m.frames_written.fetch_add(1, std::memory_order_relaxed);
  if (out.superseded) e.dead_bytes.fetch_add(frame.size(), std::memory_order_relaxed);
  e.note_acknowledged(pos.offset + frame.size());
  if (e.config.durability == Durability::kSynced) e.wait_durable(pos.offset + frame.size());
}

void Db::del(uint8_t ks, std::string_view key) {
  Engine& e = *engine_;
  OpGuard guard(e);
  const IndexKey k = make_index_key(key);
  e.table->keyspace(ks);
  const std::string frame = WalRecord::tombstone(ks, key).encode();
  const WalPosition pos = e.value_wal->allocate(frame.size());
  fault_point(e.fault, "db.delete.allocated");
  e.value_wal->write_bytes_at(pos, frame);
  fault_point(e.fault, "db.delete.written");
  const ApplyOutcome out = e.table->apply(ks, IndexUpdate{k, pos, true});
  fault_point(e.fault, "db.delete.applied");
  e.value_wal->mark_processed(pos, frame.size());
  e.cache.update(ks, key, std::nullopt, pos.offset);
  e.m.wal_bytes_written.fetch_add(frame.size(), std::memory_order_relaxed);
  e.m.logical_bytes_ingested.fetch_add(key.size(), std::memory_order_relaxed);
  e.m.deletes.fetch_add(1, std::memory_order_relaxed);
  e.m.frames_written.fetch_add(1, std::memory_order_relaxed);
  if (out.superseded) {
    const uint64_t frames = std::max<uint64_t>(1, e.m.frames_written.load());
    e.dead_bytes.fetch_add(e.m.wal_bytes_written.load() / frames + frame.size(), std::memory_order_relaxed);
  }
  e.note_acknowledged(pos.offset + frame.size());
  if (e.config.durability == Durability::kSynced) e.wait_durable(pos.offset + frame.size());
}

void Db::write_batch(const WriteBatch& batch) {
  Engine& e = *engine_;
  OpGuard guard(e);
  if (batch.empty()) fail(ErrorCode::kInvalidArgument, "empty batch");
  std::vector<IndexKey> keys;
  keys.reserve(batch.size());
  std::string frames = WalRecord::batch_start(static_cast<uint32_t>(batch.size())).encode();
  std::vector<size_t> offsets;
  uint64_t logical = 0;
  for (const auto& op : batch.ops()) {
    keys.push_back(make_index_key(op.key));
    e.table->keyspace(op.keyspace);
    offsets.push_back(frames.size());
    if (op.value) {
      WalRecord::put(op.keyspace, op.key, *op.value).encode_to(frames);
      logical += op.key.size() + op.value->size();
    } else {
      WalRecord::tombstone(op.keyspace, op.key).encode_to(frames);
      logical += op.key.size();
    }
  }
  if (frames.size() > e.config.value_wal.fragment_size) {
    fail(ErrorCode::kInvalidArgument, "batch of " + std::to_string(frames.size()) + " bytes exceeds a fragment");
  }
  const WalPosition pos = e.value_wal->allocate(frames.size());
  fault_point(e.fault, "db.batch.allocated");
  e.value_wal->write_bytes_at(pos, frames);
  fault_point(e.fault, "db.batch.written");
  const auto& ops = batch.ops();
  for (size_t i = 0; i < ops.size(); ++i) {
    const ApplyOutcome out =
        e.table->apply(ops[i].keyspace, IndexUpdate{keys[i], pos + offsets[i], !ops[i].value.has_value()});
    if (out.superseded) {
      const size_t next = i + 1 < ops.size() ? offsets[i + 1] : frames.size();
      e.dead_bytes.fetch_add(next - offsets[i], std::memory_order_relaxed);
    }
    fault_point(e.fault, "db.batch.applied_one");
  }
  e.value_wal->mark_processed(pos, frames.size());
  for (size_t i = 0; i < ops.size(); ++i) {
    std::optional<std::string_view> v;
    if (ops[i].value) v = *ops[i].value;
    e.cache.update(ops[i].keyspace, ops[i].key, v, pos.offset + offsets[i]);
  }
  e.m.wal_bytes_written.fetch_add(frames.size(), std::memory_order_relaxed);
  e.m.logical_bytes_ingested.fetch_add(logical, std::memory_order_relaxed);
  e.m.batches.fetch_add(1, std::memory_order_relaxed);
  e.m.frames_written.fetch_add(1 + ops.size(), std::memory_order_relaxed);
  e.note_acknowledged(pos.offset + frames.size());
  if (e.config.durability == Durability::kSynced) e.wait_durable(pos.offset + frames.size());
}

std::optional<std::string> Db::get(uint8_t ks, std::string_view key) {
  Engine& e = *engine_;
  OpGuard guard(e);
  const IndexKey k = make_index_key(key);
  if (e.cache.enabled()) {
    if (auto hit = e.cache.get(ks, key)) {
      e.m.cache_hits.fetch_add(1, std::memory_order_relaxed);
      return *hit;
    }
    e.m.cache_misses.fetch_add(1, std::memory_order_relaxed);
  }
  for (int attempt = 0;; ++attempt) {
    const uint64_t token = e.cache.token(ks, key);
    const auto pos = e.resolve(ks, k);
    if (!pos) return std::nullopt;
    WalRecord rec;
    try {
      rec = e.value_wal->read_at(*pos);
    } catch (const Error& err) {
      // Relocation moved the entry and reclaimed its fragment meanwhile.
      if (!retryable(err) || attempt >= kMaxRetries) throw;
      continue;
    }
    e.m.value_wal_reads.fetch_add(1, std::memory_order_relaxed);
    if (rec.key != key || rec.keyspace != ks || rec.deletes_key() || rec.kind == RecordKind::kBatchStart) {
      fail(ErrorCode::kCorruption, "index points at a frame for another key");
    }
    std::string value(rec.user_value());
    e.cache.fill(ks, key, value, pos->offset, token);
    return value;
  }
}

bool Db::exists(uint8_t ks, std::string_view key) {
  Engine& e = *engine_;
  OpGuard guard(e);
  return e.resolve(ks, make_index_key(key)).has_value();
}

std::optional<std::pair<std::string, std::string>> Db::less_than(uint8_t ks, std::string_view key) {
  Engine& e = *engine_;
  OpGuard guard(e);
  const IndexKey k = make_index_key(key);
  for (int attempt = 0;; ++attempt) {
    try {
      const auto prev = e.table->prev_entry(ks, k);
      if (!prev) return std::nullopt;
      const WalRecord rec = e.value_wal->read_at(prev->second);
      e.m.value_wal_reads.fetch_add(1, std::memory_order_relaxed);
      if (rec.key != key_view(prev->first) || rec.deletes_key()) {
        fail(ErrorCode::kCorruption, "index points at a frame for another key");
      }
      return std::make_pair(rec.key, std::string(rec.user_value()));
    } catch (const Error& err) {
      if (!retryable(err) || attempt >= kMaxRetries) throw;
    }
  }
}

void Db::flush_durability() {
  Engine& e = *engine_;
  OpGuard guard(e);
  e.wait_durable(e.acked_end.load());
  e.index_wal->sync();
}

RelocationResult Db::trigger_relocation(const std::optional<RelocationConfig>& override_config) {
  Engine& e = *engine_;
  OpGuard guard(e);
  return e.relocate(override_config ? *override_config : e.config.relocation);
}

WalPosition Db::min_required_position() const { return WalPosition(engine_->gc_watermark.load()); }

Metrics Db::metrics() const {
  const Counters& c = engine_->m;
  Metrics out;
  out.wal_bytes_written = c.wal_bytes_written.load();
  out.logical_bytes_ingested = c.logical_bytes_ingested.load();
  out.index_bytes_written = c.index_bytes_written.load();
  out.value_wal_reads = c.value_wal_reads.load();
  out.index_store_reads = c.index_store_reads.load();
  out.bloom_negative_hits = c.bloom_negative_hits.load();
  out.cache_hits = c.cache_hits.load();
  out.cache_misses = c.cache_misses.load();
  out.relocated_entries = c.relocated_entries.load();
  out.relocation_bytes_written = c.relocation_bytes_written.load();
  out.relocation_value_reads = c.relocation_value_reads.load();
  out.cas_rejections = c.cas_rejections.load();
  out.flushes = c.flushes.load();
  out.snapshots = c.snapshots.load();
  out.writes = c.writes.load();
  out.deletes = c.deletes.load();
  out.batches = c.batches.load();
  for (size_t i = 0; i < out.optimistic_iterations.size(); ++i) out.optimistic_iterations[i] = c.optimistic_iterations[i].load();
  return out;
}

RecoveryStats Db::recovery_stats() const { return engine_->recovery; }

void Db::close() {
  Engine& e = *engine_;
  if (e.closed.exchange(true)) return;
  std::unique_lock lock(e.gate);
  e.stop_background();
  if (e.fault == nullptr || !e.fault->crashed()) {
    e.flush_dirty(true);
    e.write_snapshot();
    e.value_wal->close();
    e.index_wal->close();
  }
  e.release_lock();
}

size_t Db::flush_dirty_cells() {
  OpGuard guard(*engine_);
  return engine_->flush_dirty(true);
}

uint64_t Db::write_snapshot() {
  OpGuard guard(*engine_);
  return engine_->write_snapshot();
}

size_t Db::evict_cells(size_t budget) {
  OpGuard guard(*engine_);
  return engine_->table->evict_to(budget);
}

const DbConfig& Db::config() const { return engine_->config; }
LargeTable& Db::table() { return *engine_->table; }
const Wal& Db::value_wal() const { return *engine_->value_wal; }
const Wal& Db::index_wal() const { return *engine_->index_wal; }

}  // namespace walkv
