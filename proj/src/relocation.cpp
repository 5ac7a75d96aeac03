#include <algorithm>
#include <thread>

#include "engine.hpp"
#include "walkv/error.hpp"

namespace walkv {

RelocationResult Engine::relocate(const RelocationConfig& cfg) {
  if (relocation_busy.exchange(true)) fail(ErrorCode::kBusy, "relocation pass already running");
  struct Release {
    std::atomic<bool>& flag;
    ~Release() { flag.store(false); }
  } release{relocation_busy};

  RelocationResult res;
  res.watermark = WalPosition(gc_watermark.load());
  fault_point(fault, "reloc.begin");
  const WalPosition processed = value_wal->last_processed();
  const WalPosition cutoff = std::min(cfg.cutoff, processed);
  if (cutoff <= res.watermark) return res;
  if (cfg.strategy == RelocationStrategy::kWalBased) {
    relocate_wal_based(cfg, cutoff, res);
  } else {
    relocate_index_based(cfg, cutoff, res);
  }
  return res;
}

void Engine::rewrite(uint8_t ks, const IndexKey& key, std::string_view value, WalPosition old, RelocationDecision d,
                     RelocationResult& res) {
  const WalPosition processed = value_wal->last_processed();
  const bool remove = d == RelocationDecision::kRemove;
  const WalRecord rec = remove ? WalRecord::relocated(ks, key_view(key), old, std::nullopt)
                               : WalRecord::relocated(ks, key_view(key), old, value);
  const std::string frame = rec.encode();
  const WalPosition pos = value_wal->allocate(frame.size());
  value_wal->write_bytes_at(pos, frame);
  fault_point(fault, "reloc.copied");
  const bool applied = table->apply_relocated(ks, IndexUpdate{key, pos, remove}, old, processed);
  value_wal->mark_processed(pos, frame.size());
  fault_point(fault, "reloc.applied");
  m.wal_bytes_written.fetch_add(frame.size(), std::memory_order_relaxed);
  m.relocation_bytes_written.fetch_add(frame.size(), std::memory_order_relaxed);
  if (!applied) {
    ++res.cas_rejected;
    m.cas_rejections.fetch_add(1, std::memory_order_relaxed);
    return;
  }
  if (remove) {
    ++res.removed;
    cache.update(ks, key_view(key), std::nullopt, pos.offset);
  } else {
    ++res.relocated;
    m.relocated_entries.fetch_add(1, std::memory_order_relaxed);
  }
}

void Engine::relocate_wal_based(const RelocationConfig& cfg, WalPosition cutoff, RelocationResult& res) {
  const uint64_t fs = config.value_wal.fragment_size;
  const WalPosition start = std::max(res.watermark, value_wal->first_position());
  WalPosition target = cutoff;
  auto it = value_wal->replay_from(start, cutoff);
  while (auto e = it.next()) {
    ++res.scanned;
    const WalRecord& rec = e->record;
    if (rec.kind == RecordKind::kBatchStart || rec.deletes_key() || rec.key.size() != kIndexKeySize) {
      ++res.skipped;
      continue;
    }
    const IndexKey key = make_index_key(rec.key);
    // Live iff the index still points at this very frame.
    const auto eff = table->effective(rec.keyspace, key);
    if (!eff || eff->tombstone || eff->position != e->position) {
      ++res.skipped;
      continue;
    }
    const std::string_view value = rec.user_value();
    RelocationDecision d = RelocationDecision::kKeep;
    if (cfg.filter) d = cfg.filter(rec.keyspace, rec.key, value, e->position);
    if (d == RelocationDecision::kStop) {
      res.stopped = true;
      target = WalPosition(e->position.offset - e->position.offset % fs);
      break;
    }
    rewrite(rec.keyspace, key, value, e->position, d, res);
  }
  if (!res.stopped && !it.reached_limit()) {
    // Torn or missing frame below the cutoff: only what was scanned is safe.
    target = WalPosition(it.end_position().offset - it.end_position().offset % fs);
  }
  finalize_relocation(target, res);
}

void Engine::relocate_index_based(const RelocationConfig& cfg, WalPosition cutoff, RelocationResult& res) {
  for (const CellRef& cell : table->all_cells()) {
    if (table->state(cell) == CellState::kEmpty) continue;
    for (const IndexEntry& e : table->merged_entries(cell)) {
      if (e.tombstone() || e.wal_position() >= cutoff) continue;
      ++res.scanned;
      const WalRecord rec = value_wal->read_at(e.wal_position());
      ++res.value_reads;
      m.relocation_value_reads.fetch_add(1, std::memory_order_relaxed);
      if (rec.key != key_view(e.key) || rec.keyspace != cell.keyspace) {
        fail(ErrorCode::kCorruption, "index entry does not match its log frame");
      }
      const std::string_view value = rec.user_value();
      RelocationDecision d = RelocationDecision::kKeep;
      if (cfg.filter) d = cfg.filter(cell.keyspace, rec.key, value, e.wal_position());
      if (d == RelocationDecision::kStop) {
        res.stopped = true;
        return;  // cells are not in log order, so nothing below the cutoff is known clear
      }
      rewrite(cell.keyspace, e.key, value, e.wal_position(), d, res);
    }
  }
  finalize_relocation(cutoff, res);
}

void Engine::finalize_relocation(WalPosition watermark, RelocationResult& res) {
  if (watermark <= res.watermark) return;
  // Let in-flight writes below our copies finish so the flush covers them.
  const WalPosition reached = value_wal->tail();
  while (value_wal->last_processed() < reached) std::this_thread::yield();
  fault_point(fault, "reloc.finalize");
  flush_dirty(true);
  uint64_t cur = gc_watermark.load();
  while (cur < watermark.offset && !gc_watermark.compare_exchange_weak(cur, watermark.offset)) {
  }
  // Both Control Region slots must stop referencing anything below the
  // watermark before fragments disappear.
  write_snapshot();
  write_snapshot();
  fault_point(fault, "reloc.gc");
  res.watermark = watermark;
  res.fragments_deleted = value_wal->gc_before(watermark);

  uint64_t index_floor = index_wal->last_processed().offset;
  const auto slots = control->read_slots();
  if (!slots[0] || !slots[1]) return;
  for (const auto& slot : slots) {
    for (const auto& c : slot->cells) index_floor = std::min(index_floor, c.flushed_index_pos.offset);
  }
  for (const auto& c : table->snapshot_metadata(WalPosition::none()).cells) {
    index_floor = std::min(index_floor, c.flushed_index_pos.offset);
  }
  res.index_fragments_deleted = index_wal->gc_before(WalPosition(index_floor));
}

}  // namespace walkv
