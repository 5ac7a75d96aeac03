#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include "support.hpp"
#include "walkv/coding.hpp"
#include "walkv/error.hpp"
#include "walkv/wal.hpp"

using namespace walkv;
using walkv::testing::TempDir;

namespace {

WalConfig small(uint64_t fs = 1024) {
  WalConfig c;
  c.fragment_size = fs;
  c.prealloc_fragments = 1;
  return c;
}

WalPosition append(Wal& wal, const WalRecord& r) {
  const std::string f = r.encode();
  const WalPosition p = wal.allocate(f.size());
  wal.write_bytes_at(p, f);
  wal.mark_processed(p, f.size());
  return p;
}

std::vector<WalEntry> replay_all(const Wal& wal, WalPosition from = WalPosition(0)) {
  std::vector<WalEntry> out;
  auto it = wal.replay_from(from);
  while (auto e = it.next()) out.push_back(*e);
  return out;
}

// Sort the processed ranges and scan for the first hole.
uint64_t hole_scan(std::vector<std::pair<uint64_t, uint64_t>> ranges, uint64_t base = 0) {
  std::sort(ranges.begin(), ranges.end());
  uint64_t at = base;
  for (const auto& [s, e] : ranges) {
    if (s > at) break;
    at = std::max(at, e);
  }
  return at;
}

}  // namespace

TEST(WalRecord, RoundTripsEveryKind) {
  const std::vector<WalRecord> recs = {
      WalRecord::put(3, "key", "value"),
      WalRecord::put(0, "", ""),
      WalRecord::tombstone(7, std::string(32, 'k')),
      WalRecord::batch_start(17),
      WalRecord::relocated(1, "abc", WalPosition(4096), std::string_view("v")),
      WalRecord::relocated(1, "abc", WalPosition(8), std::nullopt),
  };
  for (const auto& r : recs) {
    const std::string f = r.encode();
    ASSERT_EQ(f.size(), r.encoded_size());
    WalRecord back;
    size_t len = 0;
    ASSERT_EQ(decode_frame(f, &back, &len), FrameStatus::kOk);
    EXPECT_EQ(len, f.size());
    EXPECT_EQ(back, r);
  }
  EXPECT_EQ(WalRecord::batch_start(17).batch_count(), 17u);
  EXPECT_TRUE(recs[2].deletes_key());
  EXPECT_EQ(recs[4].relocated_from(), WalPosition(4096));
  EXPECT_EQ(recs[4].user_value(), "v");
  EXPECT_FALSE(recs[4].deletes_key());
  EXPECT_TRUE(recs[5].deletes_key());
}

TEST(WalRecord, FrameLayoutIsBitExact) {
  const std::string f = WalRecord::put(5, "ab", "xyz").encode();
  ASSERT_EQ(f.size(), 12u + 2 + 3);
  EXPECT_EQ(decode_fixed32(f.data() + 4), 4u + 2 + 3);
  EXPECT_EQ(static_cast<uint8_t>(f[8]), 1);
  EXPECT_EQ(static_cast<uint8_t>(f[9]), 5);
  EXPECT_EQ(decode_fixed16(f.data() + 10), 2);
  EXPECT_EQ(f.substr(12), "abxyz");
  EXPECT_EQ(decode_fixed32(f.data()), walkv::testing::reference_crc32(std::string_view(f).substr(4)));
  EXPECT_EQ(walkv::testing::reference_crc32("123456789"), 0xcbf43926u);
}

TEST(Wal, FirstAllocationIsZeroAndPaddingSkipsBoundary) {
  TempDir dir;
  Wal wal(dir.path(), small(1024));
  EXPECT_EQ(wal.allocate(1000), WalPosition(0));
  wal.mark_processed(WalPosition(0), 1000);
  EXPECT_EQ(wal.last_processed(), WalPosition(1000));
  const WalPosition p = wal.allocate(100);
  EXPECT_EQ(p, WalPosition(1024));
  // The 24-byte gap is processed already; contiguity holds across it.
  EXPECT_EQ(wal.last_processed(), WalPosition(1024));
  wal.mark_processed(p, 100);
  EXPECT_EQ(wal.last_processed(), WalPosition(1124));
  EXPECT_THROW(wal.allocate(1025), Error);
}

TEST(Wal, ConcurrentAllocationsTileThePrefix) {
  TempDir dir;
  constexpr uint64_t fs = 4096;
  Wal wal(dir.path(), small(fs));
  std::mutex mu;
  std::vector<std::pair<uint64_t, uint64_t>> ranges;
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      std::mt19937_64 rng(t);
      std::vector<std::pair<uint64_t, uint64_t>> mine;
      for (int i = 0; i < 2000; ++i) {
        const size_t len = 1 + rng() % 700;
        const WalPosition p = wal.allocate(len);
        mine.emplace_back(p.offset, p.offset + len);
        wal.mark_processed(p, len);
      }
      std::lock_guard lock(mu);
      ranges.insert(ranges.end(), mine.begin(), mine.end());
    });
  }
  for (auto& t : threads) t.join();
  std::sort(ranges.begin(), ranges.end());
  uint64_t at = 0;
  for (const auto& [s, e] : ranges) {
    ASSERT_GE(s, at) << "overlap";
    if (s > at) {
      // Only a fragment-tail remainder may be skipped.
      ASSERT_EQ(s % fs, 0u);
      ASSERT_EQ(s - at, fs - at % fs);
    }
    ASSERT_EQ(s / fs, (e - 1) / fs) << "range spans fragments";
    at = e;
  }
  EXPECT_EQ(wal.tail().offset, at);
  EXPECT_EQ(wal.last_processed().offset, at);
}

TEST(PositionTracker, OutOfOrderMarksMatchHoleScan) {
  EXPECT_EQ(PositionTracker().last_processed(), 0u);
  {
    PositionTracker t;
    t.mark(100, 200);
    EXPECT_EQ(t.last_processed(), 0u);
    t.mark(0, 100);
    EXPECT_EQ(t.last_processed(), 200u);
  }
  std::mt19937_64 rng(42);
  for (int round = 0; round < 50; ++round) {
    std::vector<std::pair<uint64_t, uint64_t>> all;
    uint64_t at = 0;
    for (int i = 0; i < 200; ++i) {
      const uint64_t len = 1 + rng() % 50;
      all.emplace_back(at, at + len);
      at += len;
    }
    std::shuffle(all.begin(), all.end(), rng);
    PositionTracker t;
    std::vector<std::pair<uint64_t, uint64_t>> done;
    for (const auto& r : all) {
      t.mark(r.first, r.second);
      done.push_back(r);
      ASSERT_EQ(t.last_processed(), hole_scan(done));
    }
    EXPECT_EQ(t.pending_ranges(), 0u);
  }
}

TEST(Wal, WriteIsVisibleToRead) {
  TempDir dir;
  Wal wal(dir.path(), small());
  const auto a = append(wal, WalRecord::put(0, "k1", "v1"));
  const auto b = append(wal, WalRecord::tombstone(0, "k1"));
  EXPECT_EQ(wal.read_at(a), WalRecord::put(0, "k1", "v1"));
  const WalRecord t = wal.read_at(b);
  EXPECT_EQ(t.kind, RecordKind::kTombstone);
  EXPECT_TRUE(t.value.empty());
  EXPECT_THROW(wal.read_at(WalPosition(5000)), Error);
}

TEST(Wal, EverySingleBitFlipIsRejected) {
  TempDir dir;
  Wal wal(dir.path(), small());
  const WalRecord rec = WalRecord::put(2, "some-key", "some-value");
  const auto p = append(wal, rec);
  const auto file = wal.fragment_files().at(0);
  const std::string orig = walkv::testing::peek(file, p.offset, rec.encoded_size());
  for (size_t byte = 0; byte < orig.size(); ++byte) {
    for (int bit = 0; bit < 8; ++bit) {
      std::string bad = orig;
      bad[byte] = static_cast<char>(bad[byte] ^ (1 << bit));
      walkv::testing::poke(file, p.offset, bad);
      try {
        (void)wal.read_at(p);
        ADD_FAILURE() << "flip at byte " << byte << " bit " << bit << " accepted";
      } catch (const Error& e) {
        EXPECT_TRUE(e.code() == ErrorCode::kCorruption || e.code() == ErrorCode::kOutOfRange);
      }
      EXPECT_TRUE(replay_all(wal).empty());
    }
  }
  walkv::testing::poke(file, p.offset, orig);
  EXPECT_EQ(wal.read_at(p), rec);
}

TEST(Wal, ReplayStopsAtTornFrame) {
  TempDir dir;
  {
    Wal wal(dir.path(), small());
    EXPECT_TRUE(replay_all(wal).empty());
    append(wal, WalRecord::put(0, "a", "1"));
    append(wal, WalRecord::put(0, "b", "2"));
    const auto third = append(wal, WalRecord::put(0, "c", std::string(100, 'x')));
    EXPECT_EQ(replay_all(wal).size(), 3u);
    // Second half of the third frame never reached the disk.
    walkv::testing::poke(wal.fragment_files().at(0), third.offset + 60, std::string(52, '\0'));
  }
  Wal wal(dir.path(), small());
  const auto got = replay_all(wal);
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].record.key, "a");
  EXPECT_EQ(got[1].record.key, "b");
}

TEST(Wal, GcDeletesWholeFragmentsBelowPosition) {
  TempDir dir;
  Wal wal(dir.path(), small(1024));
  std::vector<WalPosition> ps;
  while (wal.tail().offset < 4096) ps.push_back(append(wal, WalRecord::put(0, "k", std::string(200, 'v'))));
  EXPECT_EQ(wal.gc_before(WalPosition(0)), 0u);
  EXPECT_EQ(wal.gc_before(WalPosition(2500)), 2u);  // inside fragment 2
  EXPECT_EQ(wal.first_position(), WalPosition(2048));
  EXPECT_EQ(wal.gc_before(WalPosition(2048)), 0u);
  for (const auto& p : ps) {
    if (p.offset < 2048) {
      EXPECT_THROW(wal.read_at(p), Error);
    } else {
      EXPECT_EQ(wal.read_at(p).key, "k");
    }
  }
  EXPECT_FALSE(std::filesystem::exists(dir / "0000000000000000.wal"));
  EXPECT_FALSE(std::filesystem::exists(dir / "0000000000000400.wal"));
  EXPECT_TRUE(std::filesystem::exists(dir / "0000000000000800.wal"));
}

TEST(Wal, SyncedFramesSurviveOsCrash) {
  TempDir dir;
  uint64_t synced = 0;
  {
    Wal wal(dir.path(), small(1024));
    wal.sync();  // empty: no-op
    for (int i = 0; i < 20; ++i) append(wal, WalRecord::put(0, "k" + std::to_string(i), "v"));
    wal.sync();
    wal.sync();
    synced = wal.synced().offset;
    EXPECT_EQ(synced, wal.last_processed().offset);
    for (int i = 20; i < 30; ++i) append(wal, WalRecord::put(0, "k" + std::to_string(i), "v"));
  }
  walkv::testing::drop_unsynced(dir.path(), 1024, synced);
  Wal wal(dir.path(), small(1024));
  const auto got = replay_all(wal);
  ASSERT_EQ(got.size(), 20u);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(got[i].record.key, "k" + std::to_string(i));
}

TEST(Wal, ReplayCrossesPaddingAndRespectsLimit) {
  TempDir dir;
  Wal wal(dir.path(), small(256));
  std::vector<WalPosition> ps;
  for (int i = 0; i < 12; ++i) ps.push_back(append(wal, WalRecord::put(0, "key", std::string(50 + i, 'v'))));
  const auto all = replay_all(wal);
  ASSERT_EQ(all.size(), ps.size());
  for (size_t i = 0; i < ps.size(); ++i) EXPECT_EQ(all[i].position, ps[i]);
  auto it = wal.replay_from(ps[3], ps[7]);
  size_t n = 0;
  while (it.next()) ++n;
  EXPECT_EQ(n, 4u);
  EXPECT_TRUE(it.reached_limit());
}

TEST(Wal, ClosedLogRejectsAllocation) {
  TempDir dir;
  Wal wal(dir.path(), small());
  wal.close();
  try {
    wal.allocate(10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kClosed);
  }
}

TEST(Wal, ResetTailZeroesStaleSuffix) {
  TempDir dir;
  WalPosition cut;
  {
    Wal wal(dir.path(), small(1024));
    append(wal, WalRecord::put(0, "a", "1"));
    cut = wal.tail();
    append(wal, WalRecord::put(0, "b", "2"));
  }
  Wal wal(dir.path(), small(1024));
  wal.reset_tail(cut);
  EXPECT_EQ(replay_all(wal).size(), 1u);
  const auto p = append(wal, WalRecord::put(0, "c", "3"));
  EXPECT_EQ(p, cut);
  EXPECT_EQ(replay_all(wal).size(), 2u);
}
