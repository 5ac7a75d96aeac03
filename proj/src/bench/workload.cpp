#include "walkv/bench.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <thread>

#include "walkv/error.hpp"

namespace walkv::bench {

namespace {

using Clock = std::chrono::steady_clock;

uint64_t splitmix64(uint64_t& x) {
  uint64_t z = (x += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::map<std::string, uint64_t> metric_map(const Metrics& m) {
  return {
      {"wal_bytes_written", m.wal_bytes_written},
      {"logical_bytes_ingested", m.logical_bytes_ingested},
      {"index_bytes_written", m.index_bytes_written},
      {"value_wal_reads", m.value_wal_reads},
      {"index_store_reads", m.index_store_reads},
      {"bloom_negative_hits", m.bloom_negative_hits},
      {"cache_hits", m.cache_hits},
      {"cache_misses", m.cache_misses},
      {"relocated_entries", m.relocated_entries},
      {"relocation_bytes_written", m.relocation_bytes_written},
      {"cas_rejections", m.cas_rejections},
      {"flushes", m.flushes},
      {"snapshots", m.snapshots},
      {"writes", m.writes},
      {"deletes", m.deletes},
  };
}

std::map<std::string, uint64_t> delta(const Metrics& before, const Metrics& after) {
  auto a = metric_map(after);
  for (const auto& [k, v] : metric_map(before)) a[k] -= v;
  return a;
}

void finish(Report& r, Db& db, const Metrics& before, const Histogram& h) {
  const Metrics after = db.metrics();
  r.counters = delta(before, after);
  r.ops_per_second = r.seconds > 0 ? static_cast<double>(r.ops) / r.seconds : 0;
  r.p50_us = static_cast<double>(h.percentile(0.50)) / 1000.0;
  r.p99_us = static_cast<double>(h.percentile(0.99)) / 1000.0;
  r.storage_bytes_final = db.value_wal().disk_bytes() + db.index_wal().disk_bytes();
  r.write_amplification = after.logical_bytes_ingested == 0
                              ? 0
                              : static_cast<double>(after.wal_bytes_written) /
                                    static_cast<double>(after.logical_bytes_ingested);
}

}  // namespace

const char* to_string(Ratio r) {
  switch (r) {
    case Ratio::kW100: return "w100";
    case Ratio::kRW50: return "rw50";
    case Ratio::kR100: return "r100";
  }
  return "?";
}

const char* to_string(ReadOp r) {
  switch (r) {
    case ReadOp::kGet: return "get";
    case ReadOp::kExists: return "exists";
    case ReadOp::kLt: return "lt";
  }
  return "?";
}

Ratio parse_ratio(std::string_view s) {
  if (s == "w100") return Ratio::kW100;
  if (s == "rw50") return Ratio::kRW50;
  if (s == "r100") return Ratio::kR100;
  fail(ErrorCode::kInvalidArgument, "unknown ratio " + std::string(s));
}

ReadOp parse_read_op(std::string_view s) {
  if (s == "get") return ReadOp::kGet;
  if (s == "exists") return ReadOp::kExists;
  if (s == "lt") return ReadOp::kLt;
  fail(ErrorCode::kInvalidArgument, "unknown read op " + std::string(s));
}

uint64_t fill_count(const WorkloadSpec& spec) {
  const uint64_t entry = spec.key_size + spec.value_size;
  return entry == 0 ? 0 : spec.target_fill_bytes / entry;
}

IndexKey KeyStream::next() {
  IndexKey k;
  for (size_t i = 0; i < k.size(); i += 8) {
    const uint64_t w = rng_();
    std::memcpy(k.data() + i, &w, 8);
  }
  return k;
}

std::string value_for(const IndexKey& key, size_t size) {
  uint64_t s;
  std::memcpy(&s, key.data(), 8);
  s ^= size;
  std::string v(size, '\0');
  size_t i = 0;
  for (; i + 8 <= size; i += 8) {
    const uint64_t w = splitmix64(s);
    std::memcpy(v.data() + i, &w, 8);
  }
  if (i < size) {
    const uint64_t w = splitmix64(s);
    std::memcpy(v.data() + i, &w, size - i);
  }
  return v;
}

// --- Census ---

Census::Census(std::vector<IndexKey> keys) : keys_(std::move(keys)) {}

Census::Census(Census&& other) noexcept {
  std::unique_lock lock(other.mu_);
  keys_ = std::move(other.keys_);
  cdf_theta_ = other.cdf_theta_;
  cdf_ = std::move(other.cdf_);
}

void Census::append(const IndexKey& key) {
  std::unique_lock lock(mu_);
  keys_.push_back(key);
}

size_t Census::size() const {
  std::shared_lock lock(mu_);
  return keys_.size();
}

IndexKey Census::at(size_t i) const {
  std::shared_lock lock(mu_);
  return keys_.at(i);
}

std::vector<IndexKey> Census::keys() const {
  std::shared_lock lock(mu_);
  return keys_;
}

void Census::extend_cdf(double theta, size_t n) {
  if (cdf_theta_ != theta) {
    cdf_.clear();
    cdf_theta_ = theta;
  }
  cdf_.reserve(n);
  double acc = cdf_.empty() ? 0.0 : cdf_.back();
  for (size_t r = cdf_.size() + 1; r <= n; ++r) {
    acc += 1.0 / std::pow(static_cast<double>(r), theta);
    cdf_.push_back(acc);
  }
}

size_t Census::pick_index(double theta, std::mt19937_64& rng) {
  {
    std::shared_lock lock(mu_);
    const size_t n = keys_.size();
    if (n == 0) fail(ErrorCode::kInvalidArgument, "empty census");
    if (theta == 0) return std::uniform_int_distribution<size_t>(0, n - 1)(rng);
    if (cdf_theta_ == theta && cdf_.size() >= n) {
      const double u = std::uniform_real_distribution<double>(0, cdf_[n - 1])(rng);
      const size_t rank = std::upper_bound(cdf_.begin(), cdf_.begin() + n, u) - cdf_.begin() + 1;
      return n - std::min(rank, n);
    }
  }
  {
    std::unique_lock lock(mu_);
    extend_cdf(theta, keys_.size());
  }
  return pick_index(theta, rng);
}

IndexKey Census::pick(double theta, std::mt19937_64& rng) {
  const size_t i = pick_index(theta, rng);
  std::shared_lock lock(mu_);
  return keys_[i];
}

// --- Histogram ---

size_t Histogram::bucket(uint64_t ns) {
  // Four buckets per power of two.
  if (ns < 4) return ns;
  const int log = std::bit_width(ns) - 1;
  const uint64_t frac = (ns >> (log - 2)) & 3;
  return std::min<size_t>(255, static_cast<size_t>(log) * 4 + frac);
}

uint64_t Histogram::upper(size_t b) {
  if (b < 4) return b;
  const size_t log = b / 4;
  const uint64_t frac = b % 4;
  if (log >= 63) return UINT64_MAX;
  return ((4 + frac + 1) << (log - 2)) - 1;
}

void Histogram::add(uint64_t ns) {
  ++buckets_[bucket(ns)];
  ++count_;
}

void Histogram::merge(const Histogram& o) {
  for (size_t i = 0; i < buckets_.size(); ++i) buckets_[i] += o.buckets_[i];
  count_ += o.count_;
}

uint64_t Histogram::percentile(double q) const {
  if (count_ == 0) return 0;
  const uint64_t want = static_cast<uint64_t>(std::ceil(q * static_cast<double>(count_)));
  uint64_t seen = 0;
  for (size_t i = 0; i < buckets_.size(); ++i) {
    seen += buckets_[i];
    if (seen >= std::max<uint64_t>(want, 1)) return upper(i);
  }
  return upper(buckets_.size() - 1);
}

// --- phases ---

FillResult run_fill(Db& db, const WorkloadSpec& spec) {
  const uint64_t n = fill_count(spec);
  if (spec.key_size != kIndexKeySize) fail(ErrorCode::kInvalidArgument, "keys are 32 bytes");
  KeyStream stream(spec.seed);
  std::vector<IndexKey> keys(n);
  for (auto& k : keys) k = stream.next();

  const Metrics before = db.metrics();
  const auto t0 = Clock::now();
  const size_t workers = std::max<size_t>(1, std::min<size_t>(spec.workers, n == 0 ? 1 : n));
  std::vector<Histogram> hists(workers);
  std::atomic<uint64_t> next{0};
  std::vector<std::thread> threads;
  for (size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      for (;;) {
        const uint64_t i = next.fetch_add(1);
        if (i >= n) return;
        const std::string v = value_for(keys[i], spec.value_size);
        const auto s = Clock::now();
        db.put(0, key_view(keys[i]), v);
        hists[w].add(std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - s).count());
      }
    });
  }
  for (auto& t : threads) t.join();

  FillResult out{Census(std::move(keys)), {}};
  Histogram h;
  for (const auto& x : hists) h.merge(x);
  out.report.phase = "fill";
  out.report.ops = n;
  out.report.writes = n;
  out.report.seconds = seconds_since(t0);
  finish(out.report, db, before, h);
  return out;
}

Report run_measure(Db& db, const WorkloadSpec& spec, Census& census) {
  if (spec.cooldown.count() > 0) std::this_thread::sleep_for(spec.cooldown);
  if (census.size() == 0 && spec.ratio != Ratio::kW100) fail(ErrorCode::kInvalidArgument, "nothing to read");

  const Metrics before = db.metrics();
  const auto t0 = Clock::now();
  const auto deadline = t0 + spec.duration;
  std::atomic<bool> stop{false};
  std::atomic<uint64_t> reads{0}, writes{0}, violations{0};
  std::vector<Histogram> hists(spec.workers);

  std::thread relocator;
  if (spec.relocation) {
    relocator = std::thread([&] {
      while (!stop.load()) {
        try {
          db.trigger_relocation();
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kBusy) violations.fetch_add(1);
        }
        for (int i = 0; i < 20 && !stop.load(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(50));
      }
    });
  }

  std::vector<std::thread> threads;
  for (size_t w = 0; w < spec.workers; ++w) {
    threads.emplace_back([&, w] {
      std::mt19937_64 rng(spec.seed * 0x9e3779b97f4a7c15ull + w + 1);
      KeyStream fresh(spec.seed ^ (0xa5a5a5a5a5a5a5a5ull + w));
      std::bernoulli_distribution coin(0.5);
      uint64_t my_reads = 0, my_writes = 0;
      while (Clock::now() < deadline) {
        for (int batch = 0; batch < 64; ++batch) {
          bool read = spec.ratio == Ratio::kR100 || (spec.ratio == Ratio::kRW50 && coin(rng));
          const auto s = Clock::now();
          if (!read) {
            const IndexKey k = fresh.next();
            db.put(0, key_view(k), value_for(k, spec.value_size));
            census.append(k);
            ++my_writes;
          } else {
            const IndexKey k = census.pick(spec.zipf_theta, rng);
            switch (spec.read_op) {
              case ReadOp::kGet: {
                const auto v = db.get(0, key_view(k));
                if (!v || *v != value_for(k, spec.value_size)) violations.fetch_add(1);
                break;
              }
              case ReadOp::kExists:
                if (!db.exists(0, key_view(k))) violations.fetch_add(1);
                break;
              case ReadOp::kLt: {
                const auto p = db.less_than(0, key_view(k));
                if (p && (p->first >= key_view(k) ||
                          p->second != value_for(make_index_key(p->first), spec.value_size))) {
                  violations.fetch_add(1);
                }
                break;
              }
            }
            ++my_reads;
          }
          hists[w].add(std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - s).count());
        }
      }
      reads.fetch_add(my_reads);
      writes.fetch_add(my_writes);
    });
  }
  for (auto& t : threads) t.join();
  stop.store(true);
  if (relocator.joinable()) relocator.join();

  Report r;
  r.phase = "measure";
  r.reads = reads.load();
  r.writes = writes.load();
  r.ops = r.reads + r.writes;
  r.seconds = seconds_since(t0);
  r.violations = violations.load();
  Histogram h;
  for (const auto& x : hists) h.merge(x);
  finish(r, db, before, h);
  return r;
}

uint64_t verify_census(Db& db, const Census& census, size_t value_size) {
  uint64_t bad = 0;
  for (const IndexKey& k : census.keys()) {
    const auto v = db.get(0, key_view(k));
    if (!v || *v != value_for(k, value_size)) ++bad;
  }
  return bad;
}

// --- index microbenchmark ---

namespace {

struct IndexFile {
  std::string flat;
  std::string header;
  std::unique_ptr<File> flat_file;
  std::unique_ptr<File> header_file;
};

std::unique_ptr<ByteSource> source_for(const std::string& bytes, const std::unique_ptr<File>& file) {
  if (file) return std::make_unique<FileRegionSource>(*file, 0, bytes.size());
  return std::make_unique<MemorySource>(bytes);
}

std::unique_ptr<File> spill(const std::filesystem::path& path, const std::string& bytes) {
  auto f = std::make_unique<File>(File::create(path, nullptr, "bench"));
  f->write_at(0, bytes.data(), bytes.size());
  return f;
}

}  // namespace

std::vector<IndexBenchRow> run_index_microbench(const IndexBenchSpec& spec) {
  std::vector<IndexBenchRow> rows;
  for (size_t w : spec.windows) {
    IndexBenchRow o;
    o.format = IndexFormat::kOptimistic;
    o.window = w;
    rows.push_back(o);
    IndexBenchRow h;
    h.format = IndexFormat::kHeader;
    h.window = w;
    rows.push_back(h);
  }
  std::vector<double> elapsed(rows.size(), 0);
  std::vector<uint64_t> total_reads(rows.size(), 0);
  if (!spec.dir.empty()) std::filesystem::create_directories(spec.dir);

  std::mt19937_64 rng(spec.seed);
  KeyStream keys(spec.seed ^ 0x5bd1e995ull);
  for (size_t f = 0; f < spec.files; ++f) {
    std::vector<IndexEntry> entries(spec.entries_per_file);
    for (auto& e : entries) {
      e.key = keys.next();
      e.position = rng() & ~kTombstoneBit;
    }
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
    entries.erase(std::unique(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.key == b.key; }),
                  entries.end());

    IndexFile file;
    file.flat = serialize_flat(entries);
    file.header = serialize_header(entries);
    if (!spec.dir.empty()) {
      file.flat_file = spill(spec.dir / ("flat-" + std::to_string(f)), file.flat);
      file.header_file = spill(spec.dir / ("header-" + std::to_string(f)), file.header);
    }

    std::vector<IndexKey> probes(spec.lookups);
    std::vector<bool> present(spec.lookups);
    std::bernoulli_distribution coin(spec.present_fraction);
    for (size_t i = 0; i < probes.size(); ++i) {
      present[i] = !entries.empty() && coin(rng);
      probes[i] = present[i] ? entries[std::uniform_int_distribution<size_t>(0, entries.size() - 1)(rng)].key
                             : keys.next();
    }
    std::vector<std::optional<uint64_t>> expected(probes.size());
    for (size_t i = 0; i < probes.size(); ++i) expected[i] = binary_search_entries(entries, probes[i]);

    for (size_t r = 0; r < rows.size(); ++r) {
      IndexBenchRow& row = rows[r];
      const bool flat = row.format == IndexFormat::kOptimistic;
      const auto src = flat ? source_for(file.flat, file.flat_file) : source_for(file.header, file.header_file);
      const WindowConfig cfg{row.window};
      std::vector<std::optional<uint64_t>> got(probes.size());
      std::vector<uint32_t> reads(probes.size());
      const auto t0 = Clock::now();
      for (size_t i = 0; i < probes.size(); ++i) {
        if (flat) {
          const auto out = optimistic_lookup(*src, entries.size(), probes[i], cfg);
          got[i] = out.position;
          reads[i] = out.iterations;
        } else {
          const auto out = header_lookup(*src, probes[i]);
          got[i] = out.position;
          reads[i] = out.reads;
        }
      }
      elapsed[r] += seconds_since(t0);
      for (size_t i = 0; i < probes.size(); ++i) {
        ++row.lookups;
        if (got[i]) ++row.found;
        if (got[i] != expected[i]) ++row.mismatches;
        total_reads[r] += reads[i];
        ++row.reads_histogram[std::min<size_t>(reads[i] == 0 ? 0 : reads[i] - 1, row.reads_histogram.size() - 1)];
        if (present[i]) {
          ++row.present_lookups;
          if (reads[i] <= 3) ++row.present_le3;
          if (reads[i] == 1) ++row.present_one;
        }
      }
    }
  }
  for (size_t r = 0; r < rows.size(); ++r) {
    rows[r].lookups_per_second = elapsed[r] > 0 ? static_cast<double>(rows[r].lookups) / elapsed[r] : 0;
    rows[r].mean_reads = rows[r].lookups ? static_cast<double>(total_reads[r]) / static_cast<double>(rows[r].lookups) : 0;
  }
  return rows;
}

// --- relocation run ---

RelocateReport run_relocate(Db& db, const RelocateSpec& spec) {
  RelocateReport out;
  const auto t0 = Clock::now();
  FillResult fill = run_fill(db, spec.workload);
  const std::vector<IndexKey> keys = fill.census.keys();
  const WalPosition cutoff = db.value_wal().tail();

  std::mt19937_64 rng(spec.workload.seed + 17);
  std::vector<size_t> order(keys.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const size_t doomed = static_cast<size_t>(std::llround(spec.delete_fraction * static_cast<double>(keys.size())));
  std::vector<bool> deleted(keys.size(), false);
  for (size_t i = 0; i < doomed; ++i) {
    deleted[order[i]] = true;
    db.del(0, key_view(keys[order[i]]));
  }
  db.flush_durability();

  out.disk_before = db.value_wal().disk_bytes();
  RelocationConfig cfg;
  cfg.strategy = spec.strategy;
  cfg.cutoff = cutoff;
  out.result = db.trigger_relocation(cfg);
  out.disk_after = db.value_wal().disk_bytes();
  out.reduction = out.disk_before == 0
                      ? 0
                      : 1.0 - static_cast<double>(out.disk_after) / static_cast<double>(out.disk_before);

  for (size_t i = 0; i < keys.size(); ++i) {
    const auto v = db.get(0, key_view(keys[i]));
    if (deleted[i]) {
      if (v) ++out.violations;
    } else {
      ++out.survivors;
      if (!v || *v != value_for(keys[i], spec.workload.value_size)) ++out.violations;
    }
  }
  out.seconds = seconds_since(t0);
  return out;
}

}  // namespace walkv::bench
