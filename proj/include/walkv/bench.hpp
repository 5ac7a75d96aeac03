#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <string>
#include <vector>

#include "walkv/db.hpp"
#include "walkv/index_format.hpp"

namespace walkv::bench {

enum class Ratio { kW100, kRW50, kR100 };
enum class ReadOp { kGet, kExists, kLt };

const char* to_string(Ratio r);
const char* to_string(ReadOp r);
Ratio parse_ratio(std::string_view s);
ReadOp parse_read_op(std::string_view s);

struct WorkloadSpec {
  uint64_t target_fill_bytes = 1ull << 30;
  size_t key_size = 32;
  size_t value_size = 1024;
  Ratio ratio = Ratio::kW100;
  ReadOp read_op = ReadOp::kGet;
  double zipf_theta = 0.0;
  std::chrono::milliseconds duration{60000};
  std::chrono::milliseconds cooldown{0};
  bool relocation = false;
  uint64_t seed = 1;
  size_t workers = 8;
};

uint64_t fill_count(const WorkloadSpec& spec);

/// 32-byte keys from an mt19937_64 stream.
class KeyStream {
 public:
  explicit KeyStream(uint64_t seed) : rng_(seed) {}
  IndexKey next();

 private:
  std::mt19937_64 rng_;
};

/// The value stored under a key is a function of the key, so any read can be
/// checked without a shadow map.
std::string value_for(const IndexKey& key, size_t size);

/// Inserted keys in insertion order. Rank 1 is the most recent key.
class Census {
 public:
  Census() = default;
  explicit Census(std::vector<IndexKey> keys);
  Census(Census&& other) noexcept;

  void append(const IndexKey& key);
  size_t size() const;
  IndexKey at(size_t i) const;
  std::vector<IndexKey> keys() const;

  /// θ = 0 picks uniformly; θ > 0 picks rank r with probability ∝ 1/r^θ.
  IndexKey pick(double theta, std::mt19937_64& rng);
  /// Index into the census of a pick, exposed for the distribution tests.
  size_t pick_index(double theta, std::mt19937_64& rng);

 private:
  void extend_cdf(double theta, size_t n);

  mutable std::shared_mutex mu_;
  std::vector<IndexKey> keys_;
  double cdf_theta_ = -1;
  std::vector<double> cdf_;  // cdf_[r-1] = sum of 1/i^θ for i ≤ r
};

/// Log-bucketed latency histogram in nanoseconds.
class Histogram {
 public:
  void add(uint64_t ns);
  void merge(const Histogram& other);
  uint64_t count() const { return count_; }
  /// Upper bound of the bucket holding the q-quantile.
  uint64_t percentile(double q) const;

 private:
  static size_t bucket(uint64_t ns);
  static uint64_t upper(size_t b);
  std::array<uint64_t, 256> buckets_{};
  uint64_t count_ = 0;
};

struct Report {
  std::string phase;
  uint64_t ops = 0;
  uint64_t reads = 0;
  uint64_t writes = 0;
  double seconds = 0;
  double ops_per_second = 0;
  double p50_us = 0;
  double p99_us = 0;
  uint64_t storage_bytes_final = 0;
  double write_amplification = 0;
  uint64_t violations = 0;
  std::map<std::string, uint64_t> counters;  // metric deltas over the phase
};

struct FillResult {
  Census census;
  Report report;
};

FillResult run_fill(Db& db, const WorkloadSpec& spec);
Report run_measure(Db& db, const WorkloadSpec& spec, Census& census);

/// Checks every census key reads back its derived value.
uint64_t verify_census(Db& db, const Census& census, size_t value_size);

enum class IndexFormat { kOptimistic, kHeader };

struct IndexBenchSpec {
  size_t files = 16;
  size_t entries_per_file = 100000;
  size_t lookups = 10000;  // per file
  std::vector<size_t> windows{800};
  /// Fraction of lookups aimed at keys that are in the file. Negative
  /// lookups dominate by default.
  double present_fraction = 0.1;
  uint64_t seed = 1;
  /// Index files are written here when set, otherwise kept in memory.
  std::filesystem::path dir;
};

struct IndexBenchRow {
  IndexFormat format = IndexFormat::kOptimistic;
  size_t window = 0;
  uint64_t lookups = 0;
  uint64_t found = 0;
  uint64_t mismatches = 0;  // against the loaded-array oracle
  double lookups_per_second = 0;
  double mean_reads = 0;
  std::array<uint64_t, 8> reads_histogram{};  // [i] = i+1 reads, last = more
  uint64_t present_lookups = 0;
  uint64_t present_le3 = 0;
  uint64_t present_one = 0;
};

std::vector<IndexBenchRow> run_index_microbench(const IndexBenchSpec& spec);

/// Desk-scale reclamation run: fill, delete a fraction, relocate up to the
/// pre-delete tail.
struct RelocateSpec {
  WorkloadSpec workload;
  double delete_fraction = 0.5;
  RelocationStrategy strategy = RelocationStrategy::kWalBased;
};

struct RelocateReport {
  uint64_t disk_before = 0;
  uint64_t disk_after = 0;
  double reduction = 0;
  RelocationResult result;
  uint64_t survivors = 0;
  uint64_t violations = 0;
  double seconds = 0;
};

RelocateReport run_relocate(Db& db, const RelocateSpec& spec);

}  // namespace walkv::bench
