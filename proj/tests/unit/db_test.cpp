#include <gtest/gtest.h>

#include <functional>
#include <map>
#include <random>
#include <thread>

#include "support.hpp"
#include "walkv/db.hpp"
#include "walkv/error.hpp"

using namespace walkv;
using walkv::testing::random_key_string;
using walkv::testing::random_value;
using walkv::testing::TempDir;

namespace {

DbConfig quiet(const TempDir& dir) {
  DbConfig c;
  c.directory = dir.path();
  c.value_wal.fragment_size = 1 << 20;
  c.index_wal.fragment_size = 1 << 20;
  c.background = false;
  return c;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return ErrorCode::kIoError;
}

}  // namespace

TEST(Db, PutGetDeleteRoundTrip) {
  TempDir dir;
  auto db = Db::open(quiet(dir));
  std::mt19937_64 rng(1);
  const std::string k = random_key_string(rng);
  EXPECT_FALSE(db->get(0, k));
  EXPECT_FALSE(db->exists(0, k));
  db->put(0, k, "hello");
  EXPECT_EQ(db->get(0, k), "hello");
  EXPECT_TRUE(db->exists(0, k));
  db->put(0, k, "world");
  EXPECT_EQ(db->get(0, k), "world");
  db->del(0, k);
  EXPECT_FALSE(db->get(0, k));
  EXPECT_FALSE(db->exists(0, k));
  db->put(0, k, "");
  EXPECT_EQ(db->get(0, k), "");
}

TEST(Db, KeysMustBe32Bytes) {
  TempDir dir;
  auto db = Db::open(quiet(dir));
  EXPECT_EQ(code_of([&] { db->put(0, "short", "v"); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { db->get(0, std::string(33, 'x')); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { db->put(4, std::string(32, 'x'), "v"); }), ErrorCode::kInvalidArgument);
}

TEST(Db, ShadowMapUnderRandomOpsAndReopen) {
  TempDir dir;
  std::mt19937_64 rng(2);
  std::map<std::string, std::optional<std::string>> shadow;
  std::vector<std::string> keys;
  for (int i = 0; i < 300; ++i) keys.push_back(random_key_string(rng));
  auto check = [&](Db& db) {
    for (const auto& [k, v] : shadow) {
      ASSERT_EQ(db.get(0, k), v);
      ASSERT_EQ(db.exists(0, k), v.has_value());
    }
  };
  {
    auto cfg = quiet(dir);
    cfg.keyspaces = {KeySpaceConfig::uniform(0, 8)};
    cfg.keyspaces[0].dirty_flush_threshold = 16;
    auto db = Db::open(cfg);
    for (int i = 0; i < 5000; ++i) {
      const std::string& k = keys[rng() % keys.size()];
      switch (rng() % 10) {
        case 0:
          db->del(0, k);
          shadow[k] = std::nullopt;
          break;
        case 1: {
          WriteBatch b;
          for (int j = 0; j < 3; ++j) {
            const std::string& bk = keys[rng() % keys.size()];
            const std::string v = random_value(rng, 20);
            b.put(0, bk, v);
            shadow[bk] = v;
          }
          db->write_batch(b);
          break;
        }
        default: {
          const std::string v = random_value(rng, rng() % 200);
          db->put(0, k, v);
          shadow[k] = v;
        }
      }
      if (i % 1000 == 999) {
        db->flush_dirty_cells();
        db->write_snapshot();
        db->evict_cells(0);
      }
    }
    check(*db);
    db->close();
  }
  auto cfg = quiet(dir);
  cfg.keyspaces = {KeySpaceConfig::uniform(0, 8)};
  auto db = Db::open(cfg);
  check(*db);
}

TEST(Db, LessThanReturnsPredecessor) {
  TempDir dir;
  auto db = Db::open(quiet(dir));
  std::mt19937_64 rng(3);
  std::map<std::string, std::string> shadow;
  for (int i = 0; i < 500; ++i) {
    const std::string k = random_key_string(rng), v = random_value(rng, 8);
    db->put(0, k, v);
    shadow[k] = v;
  }
  db->flush_dirty_cells();
  for (int i = 0; i < 100; ++i) {
    auto it = std::next(shadow.begin(), static_cast<long>(rng() % shadow.size()));
    db->del(0, it->first);
    shadow.erase(it);
  }
  for (int i = 0; i < 1000; ++i) {
    const std::string probe = random_key_string(rng);
    const auto got = db->less_than(0, probe);
    auto it = shadow.lower_bound(probe);
    if (it == shadow.begin()) {
      EXPECT_FALSE(got);
    } else {
      --it;
      ASSERT_TRUE(got);
      EXPECT_EQ(got->first, it->first);
      EXPECT_EQ(got->second, it->second);
    }
  }
}

TEST(Db, ExistsNeverReadsTheValueLog) {
  TempDir dir;
  auto cfg = quiet(dir);
  cfg.cache_capacity_bytes = 0;
  auto db = Db::open(cfg);
  std::mt19937_64 rng(4);
  std::vector<std::string> keys;
  for (int i = 0; i < 1000; ++i) {
    keys.push_back(random_key_string(rng));
    db->put(0, keys.back(), "v");
  }
  db->flush_dirty_cells();
  const uint64_t before = db->metrics().value_wal_reads;
  for (int i = 0; i < 2000; ++i) {
    EXPECT_EQ(db->exists(0, i % 2 ? keys[rng() % keys.size()] : random_key_string(rng)), i % 2 == 1);
  }
  EXPECT_EQ(db->metrics().value_wal_reads, before);
  EXPECT_GT(db->metrics().bloom_negative_hits, 900u);
  (void)db->get(0, keys[0]);
  EXPECT_EQ(db->metrics().value_wal_reads, before + 1);
}

TEST(Db, CacheServesRepeatReads) {
  TempDir dir;
  auto db = Db::open(quiet(dir));
  std::mt19937_64 rng(5);
  const std::string k = random_key_string(rng);
  db->put(0, k, "v1");
  EXPECT_EQ(db->get(0, k), "v1");
  const auto m = db->metrics();
  EXPECT_EQ(db->get(0, k), "v1");
  EXPECT_EQ(db->metrics().cache_hits, m.cache_hits + 1);
  EXPECT_EQ(db->metrics().value_wal_reads, m.value_wal_reads);
  db->del(0, k);
  EXPECT_FALSE(db->get(0, k));
}

TEST(Db, BatchIsAtomicallyVisible) {
  TempDir dir;
  auto db = Db::open(quiet(dir));
  std::mt19937_64 rng(6);
  const std::string a = random_key_string(rng), b = random_key_string(rng);
  db->put(0, b, "old");
  WriteBatch batch;
  batch.put(0, a, "A");
  batch.del(0, b);
  db->write_batch(batch);
  EXPECT_EQ(db->get(0, a), "A");
  EXPECT_FALSE(db->get(0, b));
  EXPECT_EQ(code_of([&] { db->write_batch(WriteBatch{}); }), ErrorCode::kInvalidArgument);
}

TEST(Db, OperationsAfterCloseFail) {
  TempDir dir;
  auto db = Db::open(quiet(dir));
  db->close();
  db->close();
  EXPECT_EQ(code_of([&] { db->put(0, std::string(32, 'k'), "v"); }), ErrorCode::kClosed);
  EXPECT_EQ(code_of([&] { db->get(0, std::string(32, 'k')); }), ErrorCode::kClosed);
}

TEST(Db, SecondOpenIsRefused) {
  TempDir dir;
  auto db = Db::open(quiet(dir));
  EXPECT_EQ(code_of([&] { Db::open(quiet(dir)); }), ErrorCode::kLockConflict);
}

TEST(Db, SyncedDurabilitySurvivesOsCrash) {
  TempDir dir;
  std::mt19937_64 rng(7);
  std::vector<std::pair<std::string, std::string>> written;
  uint64_t synced = 0;
  {
    auto cfg = quiet(dir);
    cfg.durability = Durability::kSynced;
    FaultInjector fault;
    cfg.fault = &fault;
    auto db = Db::open(cfg);
    for (int i = 0; i < 200; ++i) {
      written.emplace_back(random_key_string(rng), random_value(rng, 50));
      db->put(0, written.back().first, written.back().second);
    }
    synced = db->value_wal().synced().offset;
    EXPECT_GE(synced, db->value_wal().tail().offset);
    fault.crash_now();
  }
  walkv::testing::drop_unsynced(dir / "value-wal", 1 << 20, synced);
  auto db = Db::open(quiet(dir));
  for (const auto& [k, v] : written) EXPECT_EQ(db->get(0, k), v);
}

TEST(Db, FlushDurabilityCoversAcknowledgedWrites) {
  TempDir dir;
  auto db = Db::open(quiet(dir));
  std::mt19937_64 rng(8);
  for (int i = 0; i < 100; ++i) db->put(0, random_key_string(rng), "v");
  EXPECT_LT(db->value_wal().synced(), db->value_wal().tail());
  db->flush_durability();
  EXPECT_EQ(db->value_wal().synced(), db->value_wal().tail());
}

TEST(Db, ConcurrentWritersAndReaders) {
  TempDir dir;
  auto cfg = quiet(dir);
  cfg.background = true;
  cfg.snapshot_interval = std::chrono::milliseconds(50);
  cfg.keyspaces[0].dirty_flush_threshold = 64;
  auto db = Db::open(cfg);
  std::atomic<int> bad{0};
  std::vector<std::thread> threads;
  for (int w = 0; w < 8; ++w) {
    threads.emplace_back([&, w] {
      std::mt19937_64 rng(100 + w);
      std::map<std::string, std::string> mine;
      for (int i = 0; i < 3000; ++i) {
        const std::string k = mine.empty() || rng() % 3 ? random_key_string(rng)
                                                        : std::next(mine.begin(), static_cast<long>(rng() % mine.size()))->first;
        const std::string v = random_value(rng, 32);
        db->put(0, k, v);
        mine[k] = v;
        const auto& [ck, cv] = *std::next(mine.begin(), static_cast<long>(rng() % mine.size()));
        if (db->get(0, ck) != cv) ++bad;
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(bad.load(), 0);
  EXPECT_GT(db->metrics().flushes, 0u);
}

TEST(Db, WriteAmplificationIsNearOne) {
  TempDir dir;
  auto db = Db::open(quiet(dir));
  std::mt19937_64 rng(9);
  for (int i = 0; i < 2000; ++i) db->put(0, random_key_string(rng), random_value(rng, 1024));
  const auto m = db->metrics();
  const double wa = static_cast<double>(m.wal_bytes_written) / static_cast<double>(m.logical_bytes_ingested);
  EXPECT_GE(wa, 1.0);
  EXPECT_LE(wa, 1.1);
  EXPECT_DOUBLE_EQ(wa, (12.0 + 32 + 1024) / (32 + 1024));
}
