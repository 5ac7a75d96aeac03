#include <gtest/gtest.h>

#include <bit>
#include <map>
#include <random>
#include <thread>

#include "support.hpp"
#include "walkv/error.hpp"
#include "walkv/large_table.hpp"

using namespace walkv;
using walkv::testing::random_key;

namespace {

/// Flushed indices kept in memory, addressed by a fake log position.
class MemoryIndexStore : public FlushedIndexReader {
 public:
  std::optional<uint64_t> probe(WalPosition pos, const IndexKey& key, size_t) override {
    ++probes;
    const auto& v = files_.at(pos.offset);
    return binary_search_entries(v, key);
  }
  std::vector<IndexEntry> load(WalPosition pos) override {
    ++loads;
    return files_.at(pos.offset);
  }
  WalPosition put(std::vector<IndexEntry> entries) {
    const uint64_t at = next_++;
    files_[at] = std::move(entries);
    return WalPosition(at);
  }
  int probes = 0;
  int loads = 0;

 private:
  std::map<uint64_t, std::vector<IndexEntry>> files_;
  uint64_t next_ = 1000;
};

IndexKey key_in_cell(uint32_t cell, uint8_t fill, uint32_t cells = 256) {
  IndexKey k;
  k.fill(fill);
  const uint32_t bits = std::countr_zero(cells);
  const uint32_t top = cell << (32 - bits);
  k[0] = static_cast<uint8_t>(top >> 24);
  k[1] = static_cast<uint8_t>((top >> 16) | (fill & ((1u << (16 - std::min(bits, 16u))) - 1) & 0xff));
  return k;
}

/// Runs a flush the way the engine does, against the in-memory store.
bool flush(LargeTable& t, MemoryIndexStore& store, const CellRef& cell, WalPosition watermark) {
  auto job = t.begin_flush(cell, watermark);
  if (!job) return false;
  std::vector<IndexEntry> base;
  if (job->base) {
    base = *job->base;
  } else if (!job->prior_index.is_none()) {
    base = store.load(job->prior_index);
  }
  std::map<IndexKey, uint64_t> merged;
  for (const auto& e : base) merged[e.key] = e.position;
  for (const auto& e : job->entries) merged[e.key] = e.position;
  std::vector<IndexEntry> out;
  for (const auto& [k, p] : merged) out.push_back(IndexEntry{k, p});
  const WalPosition at = store.put(out);
  return t.complete_flush(cell, *job, at, &out);
}

}  // namespace

TEST(LargeTable, CellStatesFollowTheLifecycle) {
  MemoryIndexStore store;
  LargeTable t({KeySpaceConfig::uniform(0, 16)}, &store);
  const IndexKey k = key_in_cell(3, 0x11, 16);
  const CellRef cell = t.locate_cell(0, k);
  EXPECT_EQ(t.state(cell), CellState::kEmpty);

  t.apply(0, IndexUpdate{k, WalPosition(10), false});
  EXPECT_EQ(t.state(cell), CellState::kDirtyLoaded);  // never flushed: nothing on disk to miss

  ASSERT_TRUE(flush(t, store, cell, WalPosition(100)));
  EXPECT_EQ(t.state(cell), CellState::kUnloaded);
  EXPECT_EQ(t.dirty_size(cell), 0u);

  t.apply(0, IndexUpdate{key_in_cell(3, 0x22, 16), WalPosition(200), false});
  EXPECT_EQ(t.state(cell), CellState::kDirtyUnloaded);

  t.ensure_loaded(cell);
  EXPECT_EQ(t.state(cell), CellState::kDirtyLoaded);

  ASSERT_TRUE(flush(t, store, cell, WalPosition(300)));
  EXPECT_EQ(t.state(cell), CellState::kUnloaded);
  t.ensure_loaded(cell);
  EXPECT_EQ(t.state(cell), CellState::kLoaded);
  EXPECT_EQ(t.merged_entries(cell).size(), 2u);
  t.unload_cell(cell);
  EXPECT_EQ(t.state(cell), CellState::kUnloaded);
}

TEST(LargeTable, HigherPositionWins) {
  LargeTable t({KeySpaceConfig::uniform(0)});
  std::mt19937_64 rng(1);
  const IndexKey k = random_key(rng);
  EXPECT_TRUE(t.apply(0, IndexUpdate{k, WalPosition(50), false}).applied);
  EXPECT_FALSE(t.apply(0, IndexUpdate{k, WalPosition(40), false}).applied);
  const auto out = t.apply(0, IndexUpdate{k, WalPosition(60), true});
  EXPECT_TRUE(out.applied);
  EXPECT_EQ(out.superseded, WalPosition(50));
  const auto l = t.lookup(0, k);
  EXPECT_EQ(l.kind, LookupKind::kTombstoned);
  EXPECT_EQ(l.position, WalPosition(60));
}

TEST(LargeTable, DiskProbeAfterFlushAndBloomRejects) {
  MemoryIndexStore store;
  LargeTable t({KeySpaceConfig::uniform(0, 1)}, &store);
  std::mt19937_64 rng(2);
  std::vector<IndexKey> keys;
  for (int i = 0; i < 100; ++i) {
    keys.push_back(random_key(rng));
    t.apply(0, IndexUpdate{keys.back(), WalPosition(i * 10), false});
  }
  const CellRef cell = t.locate_cell(0, keys[0]);
  ASSERT_TRUE(flush(t, store, cell, WalPosition(10000)));
  for (size_t i = 0; i < keys.size(); ++i) {
    const auto l = t.lookup(0, keys[i]);
    ASSERT_EQ(l.kind, LookupKind::kNeedDiskProbe);
    const auto eff = t.effective(0, keys[i]);
    ASSERT_TRUE(eff);
    EXPECT_EQ(eff->position, WalPosition(i * 10));
  }
  int rejected = 0;
  for (int i = 0; i < 1000; ++i) {
    if (t.lookup(0, random_key(rng)).bloom_rejected) ++rejected;
  }
  EXPECT_GT(rejected, 950);
}

TEST(LargeTable, FlushTakesOnlyEntriesBelowWatermarkAndUnmergesExactly) {
  MemoryIndexStore store;
  LargeTable t({KeySpaceConfig::uniform(0, 1)}, &store);
  std::mt19937_64 rng(3);
  const IndexKey a = random_key(rng), b = random_key(rng);
  t.apply(0, IndexUpdate{a, WalPosition(10), false});
  t.apply(0, IndexUpdate{b, WalPosition(500), false});
  const CellRef cell = t.locate_cell(0, a);
  auto job = t.begin_flush(cell, WalPosition(100));
  ASSERT_TRUE(job);
  ASSERT_EQ(job->entries.size(), 1u);
  EXPECT_EQ(job->entries[0].key, a);
  // A newer write to a lands while the flush is in flight.
  t.apply(0, IndexUpdate{a, WalPosition(600), false});
  const WalPosition at = store.put(job->entries);
  ASSERT_TRUE(t.complete_flush(cell, *job, at, &job->entries));
  EXPECT_EQ(t.dirty_size(cell), 2u);  // a@600 survives the unmerge
  EXPECT_EQ(t.lookup(0, a).position, WalPosition(600));
  EXPECT_EQ(t.replay_pos(0, a), WalPosition(100));
}

TEST(LargeTable, StaleFlushIsRejected) {
  MemoryIndexStore store;
  LargeTable t({KeySpaceConfig::uniform(0, 1)}, &store);
  std::mt19937_64 rng(4);
  const IndexKey a = random_key(rng);
  t.apply(0, IndexUpdate{a, WalPosition(10), false});
  const CellRef cell = t.locate_cell(0, a);
  auto first = t.begin_flush(cell, WalPosition(100));
  auto second = t.begin_flush(cell, WalPosition(100));
  ASSERT_TRUE(first && second);
  EXPECT_FALSE(t.complete_flush(cell, *first, store.put(first->entries)));
  EXPECT_TRUE(t.complete_flush(cell, *second, store.put(second->entries)));
}

TEST(LargeTable, RelocatedUpdateNeverBeatsANewerWrite) {
  MemoryIndexStore store;
  LargeTable t({KeySpaceConfig::uniform(0, 1)}, &store);
  std::mt19937_64 rng(5);
  const IndexKey k = random_key(rng);
  t.apply(0, IndexUpdate{k, WalPosition(100), false});

  // Key moved on: the copy of 100 must not land.
  t.apply(0, IndexUpdate{k, WalPosition(200), false});
  EXPECT_FALSE(t.apply_relocated(0, IndexUpdate{k, WalPosition(900), false}, WalPosition(100), WalPosition(300)));
  EXPECT_EQ(t.lookup(0, k).position, WalPosition(200));

  // Still pointing at 200 and 200 < L: the copy lands.
  EXPECT_TRUE(t.apply_relocated(0, IndexUpdate{k, WalPosition(901), false}, WalPosition(200), WalPosition(300)));
  EXPECT_EQ(t.lookup(0, k).position, WalPosition(901));

  // A foreground write at 400 (allocated before the copy at 901 but applied
  // after it) still wins, because the copy keeps the original's order.
  EXPECT_TRUE(t.apply(0, IndexUpdate{k, WalPosition(400), false}).applied);
  EXPECT_EQ(t.lookup(0, k).position, WalPosition(400));

  // Old position not below L: refused.
  EXPECT_FALSE(t.apply_relocated(0, IndexUpdate{k, WalPosition(902), false}, WalPosition(400), WalPosition(400)));
}

TEST(LargeTable, RelocatedUpdateAgainstFlushedIndex) {
  MemoryIndexStore store;
  LargeTable t({KeySpaceConfig::uniform(0, 1)}, &store);
  std::mt19937_64 rng(6);
  const IndexKey k = random_key(rng);
  t.apply(0, IndexUpdate{k, WalPosition(100), false});
  const CellRef cell = t.locate_cell(0, k);
  ASSERT_TRUE(flush(t, store, cell, WalPosition(150)));
  EXPECT_TRUE(t.apply_relocated(0, IndexUpdate{k, WalPosition(800), false}, WalPosition(100), WalPosition(150)));
  EXPECT_EQ(t.effective(0, k)->position, WalPosition(800));
}

TEST(LargeTable, PrefixedKeySpaceGroupsByPrefix) {
  MemoryIndexStore store;
  LargeTable t({KeySpaceConfig::prefixed(1, 4)}, &store);
  IndexKey a{}, b{}, c{};
  a[0] = 1;
  b[0] = 1;
  b[31] = 9;
  c[0] = 2;
  t.apply(1, IndexUpdate{a, WalPosition(1), false});
  t.apply(1, IndexUpdate{b, WalPosition(2), false});
  t.apply(1, IndexUpdate{c, WalPosition(3), false});
  EXPECT_EQ(t.locate_cell(1, a), t.locate_cell(1, b));
  EXPECT_NE(t.locate_cell(1, a), t.locate_cell(1, c));
  EXPECT_EQ(t.locate_cell(1, a).cell_key, std::string("\x01\x00\x00\x00", 4));
  EXPECT_EQ(t.all_cells().size(), 2u);
  EXPECT_THROW(t.apply(9, IndexUpdate{a, WalPosition(4), false}), Error);
}

TEST(LargeTable, PrevEntrySkipsTombstonesAcrossCells) {
  MemoryIndexStore store;
  LargeTable t({KeySpaceConfig::uniform(0, 16)}, &store);
  const IndexKey k1 = key_in_cell(1, 0x10, 16), k2 = key_in_cell(5, 0x20, 16), k3 = key_in_cell(9, 0x30, 16);
  t.apply(0, IndexUpdate{k1, WalPosition(1), false});
  t.apply(0, IndexUpdate{k2, WalPosition(2), false});
  t.apply(0, IndexUpdate{k3, WalPosition(3), false});
  flush(t, store, t.locate_cell(0, k2), WalPosition(10));
  EXPECT_EQ(t.prev_entry(0, k3)->first, k2);
  t.apply(0, IndexUpdate{k2, WalPosition(4), true});
  EXPECT_EQ(t.prev_entry(0, k3)->first, k1);
  EXPECT_FALSE(t.prev_entry(0, k1));
}

TEST(LargeTable, MetadataAndRestore) {
  MemoryIndexStore store;
  LargeTable t({KeySpaceConfig::uniform(0, 4)}, &store);
  std::mt19937_64 rng(7);
  std::vector<IndexKey> keys;
  for (int i = 0; i < 40; ++i) {
    keys.push_back(random_key(rng));
    t.apply(0, IndexUpdate{keys.back(), WalPosition(i), false});
  }
  const CellRef cell = t.locate_cell(0, keys[0]);
  flush(t, store, cell, WalPosition(20));
  const auto meta = t.snapshot_metadata(WalPosition(40));
  ASSERT_EQ(meta.cells.size(), 1u);
  EXPECT_EQ(meta.cells[0].cell, cell);
  EXPECT_EQ(meta.cells[0].replay_pos, WalPosition(20));
  // Unflushed dirty entries in other cells hold the global position down.
  EXPECT_LE(meta.global_replay_from.offset, 20u);

  LargeTable r({KeySpaceConfig::uniform(0, 4)}, &store);
  r.restore_cell(cell, meta.cells[0].flushed_index_pos, meta.cells[0].replay_pos);
  EXPECT_EQ(r.state(cell), CellState::kUnloaded);
  EXPECT_FALSE(r.bloom_complete(cell));
  for (int i = 0; i < 20; ++i) {
    if (t.locate_cell(0, keys[i]) != cell) continue;
    EXPECT_EQ(r.effective(0, keys[i])->position, WalPosition(i));
  }
}

TEST(LargeTable, EvictionUnloadsCleanCellsOnly) {
  MemoryIndexStore store;
  LargeTable t({KeySpaceConfig::uniform(0, 8)}, &store);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 800; ++i) t.apply(0, IndexUpdate{random_key(rng), WalPosition(i), false});
  for (const auto& c : t.all_cells()) {
    flush(t, store, c, WalPosition(10000));
    t.ensure_loaded(c);
  }
  EXPECT_EQ(t.loaded_entries(), 800u);
  const IndexKey dirty = random_key(rng);
  t.apply(0, IndexUpdate{dirty, WalPosition(20000), false});
  t.evict_to(0);
  EXPECT_LE(t.loaded_entries(), 150u);
  EXPECT_EQ(t.state(t.locate_cell(0, dirty)), CellState::kDirtyLoaded);
  EXPECT_THROW(t.unload_cell(t.locate_cell(0, dirty)), Error);
}

TEST(LargeTable, ConcurrentAppliesKeepTheHighestPosition) {
  LargeTable t({KeySpaceConfig::uniform(0, 16)});
  std::mt19937_64 rng(9);
  std::vector<IndexKey> keys;
  for (int i = 0; i < 64; ++i) keys.push_back(random_key(rng));
  std::atomic<uint64_t> pos{1};
  std::vector<std::thread> threads;
  std::vector<std::vector<uint64_t>> best(8, std::vector<uint64_t>(keys.size(), 0));
  for (int w = 0; w < 8; ++w) {
    threads.emplace_back([&, w] {
      std::mt19937_64 r(w);
      for (int i = 0; i < 20000; ++i) {
        const size_t k = r() % keys.size();
        const uint64_t p = pos.fetch_add(1);
        t.apply(0, IndexUpdate{keys[k], WalPosition(p), false});
        best[w][k] = std::max(best[w][k], p);
      }
    });
  }
  for (auto& th : threads) th.join();
  for (size_t k = 0; k < keys.size(); ++k) {
    uint64_t want = 0;
    for (const auto& b : best) want = std::max(want, b[k]);
    EXPECT_EQ(t.lookup(0, keys[k]).position, WalPosition(want));
  }
}
