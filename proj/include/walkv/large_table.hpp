#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include "walkv/bloom.hpp"
#include "walkv/index_format.hpp"
#include "walkv/position.hpp"

namespace walkv {

enum class Distribution { kUniform, kPrefixed };

struct KeySpaceConfig {
  uint8_t id = 0;
  Distribution distribution = Distribution::kUniform;
  uint32_t cell_count = 256;  // uniform only; power of two
  uint32_t prefix_len = 0;    // prefixed only
  size_t dirty_flush_threshold = 4096;
  uint32_t row_count = 64;

  static KeySpaceConfig uniform(uint8_t id, uint32_t cells = 256) {
    KeySpaceConfig c;
    c.id = id;
    c.cell_count = cells;
    return c;
  }
  static KeySpaceConfig prefixed(uint8_t id, uint32_t prefix_len) {
    KeySpaceConfig c;
    c.id = id;
    c.distribution = Distribution::kPrefixed;
    c.prefix_len = prefix_len;
    return c;
  }
};

enum class CellState { kEmpty, kLoaded, kUnloaded, kDirtyLoaded, kDirtyUnloaded };
const char* to_string(CellState s);

/// Names a cell: its key space plus the cell key (the 4-byte big-endian cell
/// number for uniform key spaces, the key prefix for prefixed ones).
struct CellRef {
  uint8_t keyspace = 0;
  std::string cell_key;

  friend auto operator<=>(const CellRef&, const CellRef&) = default;
};

struct IndexUpdate {
  IndexKey key{};
  WalPosition position;
  bool tombstone = false;
};

enum class LookupKind { kFound, kTombstoned, kAbsent, kNeedDiskProbe };

struct TableLookup {
  LookupKind kind = LookupKind::kAbsent;
  /// Value position when kFound; the flushed index pointer when kNeedDiskProbe.
  WalPosition position;
  /// Leading key bytes shared by every entry of the probed index.
  size_t skip_prefix = 0;
  bool bloom_rejected = false;
};

/// The table's window onto persisted per-cell indices.
class FlushedIndexReader {
 public:
  virtual ~FlushedIndexReader() = default;
  /// Raw entry position (may carry kTombstoneBit) or nothing.
  virtual std::optional<uint64_t> probe(WalPosition index_pos, const IndexKey& key, size_t skip_prefix) = 0;
  virtual std::vector<IndexEntry> load(WalPosition index_pos) = 0;
};

struct FlushJob {
  CellRef cell;
  std::vector<IndexEntry> entries;  // ascending; tombstones carry kTombstoneBit
  /// Full flushed index when the cell was loaded; otherwise read prior_index.
  std::shared_ptr<const std::vector<IndexEntry>> base;
  WalPosition prior_index = WalPosition::none();
  WalPosition watermark;
  uint64_t epoch = 0;
  size_t skip_prefix = 0;
};

struct ApplyOutcome {
  bool applied = false;
  /// Position of a live value this update made unreachable, when known.
  std::optional<WalPosition> superseded;
};

struct EffectiveEntry {
  WalPosition position;
  bool tombstone = false;
};

struct CellMetadata {
  CellRef cell;
  WalPosition flushed_index_pos = WalPosition::none();
  WalPosition replay_pos;

  friend bool operator==(const CellMetadata&, const CellMetadata&) = default;
};

struct TableMetadata {
  std::vector<CellMetadata> cells;  // flushed cells only
  WalPosition global_replay_from;
};

struct DirtyCellInfo {
  CellRef cell;
  size_t entries = 0;
  WalPosition oldest;
  size_t threshold = 0;
};

/// Sharded in-memory index from keys to value-log positions.
///
/// Keys are exactly 32 bytes. Each cell keeps a dirty buffer of unpersisted
/// updates, optionally the full flushed index, and a bloom filter of every
/// key it has seen. Cells are grouped into rows; one mutex per row.
class LargeTable {
 public:
  explicit LargeTable(std::vector<KeySpaceConfig> keyspaces, FlushedIndexReader* reader = nullptr);
  ~LargeTable();
  LargeTable(const LargeTable&) = delete;
  LargeTable& operator=(const LargeTable&) = delete;

  void set_reader(FlushedIndexReader* reader) { reader_ = reader; }
  const KeySpaceConfig& keyspace(uint8_t id) const;
  const std::vector<KeySpaceConfig>& keyspaces() const { return configs_; }

  CellRef locate_cell(uint8_t ks, const IndexKey& key) const;

  /// Foreground update: the higher position wins.
  ApplyOutcome apply(uint8_t ks, const IndexUpdate& update);

  /// Relocation update. Replaces the mapping only while the key still points
  /// at old_position and that position is below last_processed.
  bool apply_relocated(uint8_t ks, const IndexUpdate& update, WalPosition old_position, WalPosition last_processed);

  TableLookup lookup(uint8_t ks, const IndexKey& key);

  /// Resolves the key's current mapping, probing the flushed index if needed.
  std::optional<EffectiveEntry> effective(uint8_t ks, const IndexKey& key);

  /// Largest live key strictly below key, within one key space.
  std::optional<std::pair<IndexKey, WalPosition>> prev_entry(uint8_t ks, const IndexKey& key);

  std::optional<FlushJob> begin_flush(const CellRef& cell, WalPosition watermark);
  /// Returns false if the job was superseded. merged, when given, is the
  /// full index just written and is used to rebuild the bloom filter.
  bool complete_flush(const CellRef& cell, const FlushJob& job, WalPosition new_index_pos,
                      const std::vector<IndexEntry>* merged = nullptr);

  void load_cell(const CellRef& cell, std::vector<IndexEntry> entries);
  void unload_cell(const CellRef& cell);
  /// Loads the cell's flushed index through the reader if it is not resident.
  void ensure_loaded(const CellRef& cell);
  /// Flushed index overlaid with the dirty buffer, tombstones included.
  std::vector<IndexEntry> merged_entries(const CellRef& cell);

  CellState state(const CellRef& cell) const;
  size_t dirty_size(const CellRef& cell) const;
  WalPosition flushed_index_pos(const CellRef& cell) const;
  WalPosition replay_pos(uint8_t ks, const IndexKey& key) const;
  bool bloom_complete(const CellRef& cell) const;

  TableMetadata snapshot_metadata(WalPosition last_processed) const;
  /// Recovery: installs a flushed cell in the Unloaded state.
  void restore_cell(const CellRef& cell, WalPosition index_pos, WalPosition replay_pos);

  std::vector<CellRef> all_cells() const;
  std::vector<DirtyCellInfo> dirty_cells() const;

  size_t loaded_entries() const;
  /// Unloads clean cells, least recently used first, until at most budget
  /// entries stay resident. Returns the number of cells unloaded.
  size_t evict_to(size_t budget);

 private:
  struct Slot {
    WalPosition position;
    uint64_t order = 0;  // comparison key for last-writer-wins
    bool tombstone = false;
  };

  struct Cell {
    std::string cell_key;
    std::map<IndexKey, Slot> dirty;
    std::shared_ptr<const std::vector<IndexEntry>> loaded;
    WalPosition index_pos = WalPosition::none();
    WalPosition replay_pos{0};
    BloomFilter bloom;
    bool bloom_complete = true;
    uint64_t flush_epoch = 0;
    uint64_t last_access = 0;
  };

  struct KeySpace {
    KeySpaceConfig config;
    uint32_t cell_bits = 0;
    std::unique_ptr<std::mutex[]> rows;
    std::vector<std::unique_ptr<Cell>> uniform;
    mutable std::shared_mutex prefix_mu;
    std::map<std::string, std::unique_ptr<Cell>> prefixed;
  };

  KeySpace& space(uint8_t id);
  const KeySpace& space(uint8_t id) const;
  std::string cell_key_for(const KeySpace& s, const IndexKey& key) const;
  Cell* find_cell(KeySpace& s, const std::string& cell_key) const;
  Cell* find_or_create(KeySpace& s, const std::string& cell_key);
  std::mutex& row_for(KeySpace& s, const std::string& cell_key) const;
  size_t skip_prefix(const KeySpace& s) const;
  /// Nothing when the answer needs the flushed index.
  static std::optional<std::optional<EffectiveEntry>> resolve_local(const Cell& c, const IndexKey& key);
  static CellState state_of(const Cell& c);
  void install_loaded(Cell& c, std::vector<IndexEntry> entries);
  template <typename Fn>
  void for_each_cell(Fn&& fn) const;

  std::vector<KeySpaceConfig> configs_;
  std::map<uint8_t, std::unique_ptr<KeySpace>> spaces_;
  FlushedIndexReader* reader_;
  std::atomic<uint64_t> clock_{0};
};

}  // namespace walkv
