#pragma once

#include <cstdint>
#include <functional>
#include <string_view>

#include "walkv/position.hpp"

namespace walkv {

enum class RelocationDecision { kKeep, kRemove, kStop };
enum class RelocationStrategy { kWalBased, kIndexBased };

using RelocationFilter =
    std::function<RelocationDecision(uint8_t keyspace, std::string_view key, std::string_view value, WalPosition)>;

struct RelocationConfig {
  RelocationStrategy strategy = RelocationStrategy::kWalBased;
  /// Entries below the cutoff are candidates. none() means the current
  /// last-processed position; larger values are clamped to it.
  WalPosition cutoff = WalPosition::none();
  RelocationFilter filter;  // empty: keep everything
};

struct RelocationResult {
  uint64_t scanned = 0;       // frames (WAL-based) or index entries (index-based) examined
  uint64_t relocated = 0;     // live entries rewritten at the tail
  uint64_t removed = 0;       // live entries dropped by the filter
  uint64_t skipped = 0;       // dead frames and tombstones left behind
  uint64_t cas_rejected = 0;  // rewrites that lost to a concurrent update
  uint64_t value_reads = 0;   // value-log reads issued for candidates
  bool stopped = false;
  WalPosition watermark;      // GC watermark after the pass
  size_t fragments_deleted = 0;
  size_t index_fragments_deleted = 0;
};

}  // namespace walkv
