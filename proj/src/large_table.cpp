#include "walkv/large_table.hpp"

#include <algorithm>
#include <bit>
#include <functional>

#include "walkv/coding.hpp"
#include "walkv/error.hpp"

namespace walkv {

namespace {

std::string encode_cell_number(uint32_t n) {
  std::string s(4, '\0');
  for (int i = 0; i < 4; ++i) s[i] = static_cast<char>(n >> (24 - 8 * i));
  return s;
}

uint32_t decode_cell_number(const std::string& s) {
  uint32_t n = 0;
  for (unsigned char c : s) n = (n << 8) | c;
  return n;
}

const IndexEntry* find_entry(const std::vector<IndexEntry>& entries, const IndexKey& key) {
  auto it = std::lower_bound(entries.begin(), entries.end(), key,
                             [](const IndexEntry& e, const IndexKey& k) { return e.key < k; });
  if (it != entries.end() && it->key == key) return &*it;
  return nullptr;
}

}  // namespace

const char* to_string(CellState s) {
  switch (s) {
    case CellState::kEmpty: return "Empty";
    case CellState::kLoaded: return "Loaded";
    case CellState::kUnloaded: return "Unloaded";
    case CellState::kDirtyLoaded: return "DirtyLoaded";
    case CellState::kDirtyUnloaded: return "DirtyUnloaded";
  }
  return "?";
}

LargeTable::LargeTable(std::vector<KeySpaceConfig> keyspaces, FlushedIndexReader* reader)
    : configs_(std::move(keyspaces)), reader_(reader) {
  if (configs_.empty()) fail(ErrorCode::kInvalidArgument, "at least one key space required");
  for (const auto& cfg : configs_) {
    if (spaces_.count(cfg.id)) fail(ErrorCode::kInvalidArgument, "duplicate key space id");
    if (cfg.row_count == 0) fail(ErrorCode::kInvalidArgument, "row_count must be positive");
    auto s = std::make_unique<KeySpace>();
    s->config = cfg;
    s->rows = std::make_unique<std::mutex[]>(cfg.row_count);
    if (cfg.distribution == Distribution::kUniform) {
      if (cfg.cell_count == 0 || !std::has_single_bit(cfg.cell_count)) {
        fail(ErrorCode::kInvalidArgument, "cell_count must be a power of two");
      }
      s->cell_bits = static_cast<uint32_t>(std::countr_zero(cfg.cell_count));
      s->uniform.reserve(cfg.cell_count);
      for (uint32_t i = 0; i < cfg.cell_count; ++i) {
        auto c = std::make_unique<Cell>();
        c->cell_key = encode_cell_number(i);
        c->loaded = std::make_shared<const std::vector<IndexEntry>>();
        s->uniform.push_back(std::move(c));
      }
    } else if (cfg.prefix_len == 0 || cfg.prefix_len > kIndexKeySize) {
      fail(ErrorCode::kInvalidArgument, "prefix_len must be in [1, 32]");
    }
    spaces_.emplace(cfg.id, std::move(s));
  }
}

LargeTable::~LargeTable() = default;

LargeTable::KeySpace& LargeTable::space(uint8_t id) {
  auto it = spaces_.find(id);
  if (it == spaces_.end()) fail(ErrorCode::kInvalidArgument, "unknown key space " + std::to_string(id));
  return *it->second;
}

const LargeTable::KeySpace& LargeTable::space(uint8_t id) const {
  auto it = spaces_.find(id);
  if (it == spaces_.end()) fail(ErrorCode::kInvalidArgument, "unknown key space " + std::to_string(id));
  return *it->second;
}

const KeySpaceConfig& LargeTable::keyspace(uint8_t id) const { return space(id).config; }

std::string LargeTable::cell_key_for(const KeySpace& s, const IndexKey& key) const {
  if (s.config.distribution == Distribution::kPrefixed) {
    return std::string(reinterpret_cast<const char*>(key.data()), s.config.prefix_len);
  }
  if (s.cell_bits == 0) return encode_cell_number(0);
  const uint32_t top = (uint32_t{key[0]} << 24) | (uint32_t{key[1]} << 16) | (uint32_t{key[2]} << 8) | key[3];
  return encode_cell_number(top >> (32 - s.cell_bits));
}

CellRef LargeTable::locate_cell(uint8_t ks, const IndexKey& key) const {
  return CellRef{ks, cell_key_for(space(ks), key)};
}

LargeTable::Cell* LargeTable::find_cell(KeySpace& s, const std::string& cell_key) const {
  if (s.config.distribution == Distribution::kUniform) {
    const uint32_t n = decode_cell_number(cell_key);
    if (cell_key.size() != 4 || n >= s.uniform.size()) fail(ErrorCode::kInvalidArgument, "bad cell key");
    return s.uniform[n].get();
  }
  std::shared_lock lock(s.prefix_mu);
  auto it = s.prefixed.find(cell_key);
  return it == s.prefixed.end() ? nullptr : it->second.get();
}

LargeTable::Cell* LargeTable::find_or_create(KeySpace& s, const std::string& cell_key) {
  if (Cell* c = find_cell(s, cell_key)) return c;
  std::unique_lock lock(s.prefix_mu);
  auto& slot = s.prefixed[cell_key];
  if (!slot) {
    slot = std::make_unique<Cell>();
    slot->cell_key = cell_key;
    slot->loaded = std::make_shared<const std::vector<IndexEntry>>();
  }
  return slot.get();
}

std::mutex& LargeTable::row_for(KeySpace& s, const std::string& cell_key) const {
  size_t h = s.config.distribution == Distribution::kUniform ? decode_cell_number(cell_key)
                                                             : std::hash<std::string>{}(cell_key);
  return s.rows[h % s.config.row_count];
}

size_t LargeTable::skip_prefix(const KeySpace& s) const {
  return s.config.distribution == Distribution::kPrefixed ? s.config.prefix_len : 0;
}

CellState LargeTable::state_of(const Cell& c) {
  if (c.dirty.empty()) {
    if (c.index_pos.is_none()) return CellState::kEmpty;
    return c.loaded ? CellState::kLoaded : CellState::kUnloaded;
  }
  return c.loaded ? CellState::kDirtyLoaded : CellState::kDirtyUnloaded;
}

std::optional<std::optional<EffectiveEntry>> LargeTable::resolve_local(const Cell& c, const IndexKey& key) {
  if (auto it = c.dirty.find(key); it != c.dirty.end()) {
    return std::optional<EffectiveEntry>(EffectiveEntry{it->second.position, it->second.tombstone});
  }
  if (c.loaded) {
    if (const IndexEntry* e = find_entry(*c.loaded, key)) {
      return std::optional<EffectiveEntry>(EffectiveEntry{e->wal_position(), e->tombstone()});
    }
    return std::optional<EffectiveEntry>();
  }
  if (c.index_pos.is_none()) return std::optional<EffectiveEntry>();
  return std::nullopt;
}

void LargeTable::install_loaded(Cell& c, std::vector<IndexEntry> entries) {
  if (!c.bloom_complete) {
    for (const auto& e : entries) c.bloom.insert(key_view(e.key));
    c.bloom_complete = true;
  }
  c.loaded = std::make_shared<const std::vector<IndexEntry>>(std::move(entries));
}

ApplyOutcome LargeTable::apply(uint8_t ks, const IndexUpdate& update) {
  KeySpace& s = space(ks);
  const std::string ck = cell_key_for(s, update.key);
  Cell* c = find_or_create(s, ck);
  std::lock_guard lock(row_for(s, ck));
  c->last_access = clock_.fetch_add(1, std::memory_order_relaxed);
  ApplyOutcome out;
  auto it = c->dirty.find(update.key);
  if (it != c->dirty.end()) {
    if (update.position.offset <= it->second.order) return out;
    if (!it->second.tombstone) out.superseded = it->second.position;
    it->second = Slot{update.position, update.position.offset, update.tombstone};
  } else {
    if (c->loaded) {
      if (const IndexEntry* e = find_entry(*c->loaded, update.key); e != nullptr && !e->tombstone()) {
        out.superseded = e->wal_position();
      }
    }
    c->dirty.emplace(update.key, Slot{update.position, update.position.offset, update.tombstone});
  }
  c->bloom.insert(key_view(update.key));
  out.applied = true;
  return out;
}

bool LargeTable::apply_relocated(uint8_t ks, const IndexUpdate& update, WalPosition old_position,
                                 WalPosition last_processed) {
  KeySpace& s = space(ks);
  const std::string ck = cell_key_for(s, update.key);
  Cell* c = find_cell(s, ck);
  if (c == nullptr) return false;
  std::mutex& row = row_for(s, ck);

  auto decide = [&](const std::optional<EffectiveEntry>& eff) {
    if (!eff || eff->position != old_position || eff->position >= last_processed) return false;
    c->dirty[update.key] = Slot{update.position, old_position.offset, update.tombstone};
    c->bloom.insert(key_view(update.key));
    return true;
  };

  for (;;) {
    WalPosition pointer;
    {
      std::lock_guard lock(row);
      if (auto local = resolve_local(*c, update.key)) return decide(*local);
      pointer = c->index_pos;
    }
    if (reader_ == nullptr) fail(ErrorCode::kInvalidArgument, "no flushed index reader attached");
    const auto raw = reader_->probe(pointer, update.key, skip_prefix(s));
    std::lock_guard lock(row);
    if (c->index_pos != pointer || c->loaded || c->dirty.count(update.key)) continue;
    std::optional<EffectiveEntry> eff;
    if (raw) eff = EffectiveEntry{WalPosition(*raw & ~kTombstoneBit), (*raw & kTombstoneBit) != 0};
    return decide(eff);
  }
}

TableLookup LargeTable::lookup(uint8_t ks, const IndexKey& key) {
  KeySpace& s = space(ks);
  const std::string ck = cell_key_for(s, key);
  TableLookup out;
  Cell* c = find_cell(s, ck);
  if (c == nullptr) return out;
  std::lock_guard lock(row_for(s, ck));
  c->last_access = clock_.fetch_add(1, std::memory_order_relaxed);
  if (c->bloom_complete && !c->bloom.may_contain(key_view(key))) {
    out.bloom_rejected = true;
    return out;
  }
  auto local = resolve_local(*c, key);
  if (!local) {
    out.kind = LookupKind::kNeedDiskProbe;
    out.position = c->index_pos;
    out.skip_prefix = skip_prefix(s);
  } else if (*local) {
    out.kind = (*local)->tombstone ? LookupKind::kTombstoned : LookupKind::kFound;
    out.position = (*local)->position;
  }
  return out;
}

std::optional<EffectiveEntry> LargeTable::effective(uint8_t ks, const IndexKey& key) {
  KeySpace& s = space(ks);
  const std::string ck = cell_key_for(s, key);
  Cell* c = find_cell(s, ck);
  if (c == nullptr) return std::nullopt;
  std::mutex& row = row_for(s, ck);
  for (;;) {
    WalPosition pointer;
    {
      std::lock_guard lock(row);
      if (auto local = resolve_local(*c, key)) return *local;
      pointer = c->index_pos;
    }
    if (reader_ == nullptr) fail(ErrorCode::kInvalidArgument, "no flushed index reader attached");
    const auto raw = reader_->probe(pointer, key, skip_prefix(s));
    std::lock_guard lock(row);
    if (c->index_pos != pointer || c->loaded || c->dirty.count(key)) continue;
    if (!raw) return std::nullopt;
    return EffectiveEntry{WalPosition(*raw & ~kTombstoneBit), (*raw & kTombstoneBit) != 0};
  }
}

std::optional<std::pair<IndexKey, WalPosition>> LargeTable::prev_entry(uint8_t ks, const IndexKey& key) {
  KeySpace& s = space(ks);
  std::optional<IndexKey> bound = key;
  std::string ck = cell_key_for(s, key);
  for (;;) {
    if (Cell* c = find_cell(s, ck)) {
      ensure_loaded(CellRef{ks, ck});
      std::lock_guard lock(row_for(s, ck));
      if (!c->loaded) continue;  // evicted in between; load again
      c->last_access = clock_.fetch_add(1, std::memory_order_relaxed);
      const auto& loaded = *c->loaded;
      auto di = bound ? c->dirty.lower_bound(*bound) : c->dirty.end();
      auto li = bound ? std::lower_bound(loaded.begin(), loaded.end(), *bound,
                                         [](const IndexEntry& e, const IndexKey& k) { return e.key < k; })
                      : loaded.end();
      while (di != c->dirty.begin() || li != loaded.begin()) {
        const bool have_d = di != c->dirty.begin();
        const bool have_l = li != loaded.begin();
        const IndexKey* dk = have_d ? &std::prev(di)->first : nullptr;
        const IndexKey* lk = have_l ? &std::prev(li)->key : nullptr;
        if (have_d && (!have_l || *dk >= *lk)) {
          --di;
          if (have_l && *dk == *lk) --li;  // the buffer masks the flushed entry
          if (!di->second.tombstone) return std::make_pair(di->first, di->second.position);
        } else {
          --li;
          if (!li->tombstone()) return std::make_pair(li->key, li->wal_position());
        }
      }
    }
    bound.reset();
    if (s.config.distribution == Distribution::kUniform) {
      const uint32_t n = decode_cell_number(ck);
      if (n == 0) return std::nullopt;
      ck = encode_cell_number(n - 1);
    } else {
      std::shared_lock lock(s.prefix_mu);
      auto it = s.prefixed.lower_bound(ck);
      if (it == s.prefixed.begin()) return std::nullopt;
      ck = std::prev(it)->first;
    }
  }
}

std::optional<FlushJob> LargeTable::begin_flush(const CellRef& ref, WalPosition watermark) {
  KeySpace& s = space(ref.keyspace);
  Cell* c = find_cell(s, ref.cell_key);
  if (c == nullptr) return std::nullopt;
  std::lock_guard lock(row_for(s, ref.cell_key));
  FlushJob job;
  for (const auto& [k, slot] : c->dirty) {
    if (slot.position >= watermark) continue;
    job.entries.push_back(IndexEntry{k, encode_index_position(slot.position, slot.tombstone)});
  }
  if (job.entries.empty()) return std::nullopt;
  job.cell = ref;
  job.base = c->loaded;
  job.prior_index = c->index_pos;
  job.watermark = watermark;
  job.epoch = ++c->flush_epoch;
  job.skip_prefix = skip_prefix(s);
  return job;
}

bool LargeTable::complete_flush(const CellRef& ref, const FlushJob& job, WalPosition new_index_pos,
                                const std::vector<IndexEntry>* merged) {
  KeySpace& s = space(ref.keyspace);
  Cell* c = find_cell(s, ref.cell_key);
  if (c == nullptr) return false;
  std::lock_guard lock(row_for(s, ref.cell_key));
  if (job.epoch != c->flush_epoch) return false;
  c->index_pos = new_index_pos;
  c->replay_pos = std::max(c->replay_pos, job.watermark);
  for (const auto& e : job.entries) {
    auto it = c->dirty.find(e.key);
    if (it != c->dirty.end() && it->second.position == e.wal_position() && it->second.tombstone == e.tombstone()) {
      c->dirty.erase(it);
    }
  }
  c->loaded.reset();
  if (merged != nullptr) {
    c->bloom.clear();
    for (const auto& e : *merged) c->bloom.insert(key_view(e.key));
    for (const auto& [k, slot] : c->dirty) c->bloom.insert(key_view(k));
    c->bloom_complete = true;
  }
  return true;
}

void LargeTable::load_cell(const CellRef& ref, std::vector<IndexEntry> entries) {
  KeySpace& s = space(ref.keyspace);
  Cell* c = find_or_create(s, ref.cell_key);
  std::lock_guard lock(row_for(s, ref.cell_key));
  if (c->loaded) return;
  install_loaded(*c, std::move(entries));
}

void LargeTable::unload_cell(const CellRef& ref) {
  KeySpace& s = space(ref.keyspace);
  Cell* c = find_cell(s, ref.cell_key);
  if (c == nullptr) return;
  std::lock_guard lock(row_for(s, ref.cell_key));
  if (!c->dirty.empty()) fail(ErrorCode::kInvalidArgument, "cannot unload a dirty cell");
  if (c->index_pos.is_none()) return;  // nothing on disk to fall back on
  c->loaded.reset();
}

void LargeTable::ensure_loaded(const CellRef& ref) {
  KeySpace& s = space(ref.keyspace);
  Cell* c = find_cell(s, ref.cell_key);
  if (c == nullptr) return;
  std::mutex& row = row_for(s, ref.cell_key);
  for (;;) {
    WalPosition pointer;
    {
      std::lock_guard lock(row);
      if (c->loaded) return;
      pointer = c->index_pos;
      if (pointer.is_none()) {
        install_loaded(*c, {});
        return;
      }
    }
    if (reader_ == nullptr) fail(ErrorCode::kInvalidArgument, "no flushed index reader attached");
    std::vector<IndexEntry> entries = reader_->load(pointer);
    std::lock_guard lock(row);
    if (c->loaded) return;
    if (c->index_pos != pointer) continue;
    install_loaded(*c, std::move(entries));
    return;
  }
}

std::vector<IndexEntry> LargeTable::merged_entries(const CellRef& ref) {
  KeySpace& s = space(ref.keyspace);
  Cell* c = find_cell(s, ref.cell_key);
  if (c == nullptr) return {};
  for (;;) {
    ensure_loaded(ref);
    std::lock_guard lock(row_for(s, ref.cell_key));
    if (!c->loaded) continue;
    std::vector<IndexEntry> out;
    out.reserve(c->loaded->size() + c->dirty.size());
    auto li = c->loaded->begin();
    for (const auto& [k, slot] : c->dirty) {
      while (li != c->loaded->end() && li->key < k) out.push_back(*li++);
      if (li != c->loaded->end() && li->key == k) ++li;
      out.push_back(IndexEntry{k, encode_index_position(slot.position, slot.tombstone)});
    }
    out.insert(out.end(), li, c->loaded->cend());
    return out;
  }
}

CellState LargeTable::state(const CellRef& ref) const {
  auto& s = const_cast<KeySpace&>(space(ref.keyspace));
  Cell* c = find_cell(s, ref.cell_key);
  if (c == nullptr) return CellState::kEmpty;
  std::lock_guard lock(row_for(s, ref.cell_key));
  return state_of(*c);
}

size_t LargeTable::dirty_size(const CellRef& ref) const {
  auto& s = const_cast<KeySpace&>(space(ref.keyspace));
  Cell* c = find_cell(s, ref.cell_key);
  if (c == nullptr) return 0;
  std::lock_guard lock(row_for(s, ref.cell_key));
  return c->dirty.size();
}

WalPosition LargeTable::flushed_index_pos(const CellRef& ref) const {
  auto& s = const_cast<KeySpace&>(space(ref.keyspace));
  Cell* c = find_cell(s, ref.cell_key);
  if (c == nullptr) return WalPosition::none();
  std::lock_guard lock(row_for(s, ref.cell_key));
  return c->index_pos;
}

bool LargeTable::bloom_complete(const CellRef& ref) const {
  auto& s = const_cast<KeySpace&>(space(ref.keyspace));
  Cell* c = find_cell(s, ref.cell_key);
  if (c == nullptr) return true;
  std::lock_guard lock(row_for(s, ref.cell_key));
  return c->bloom_complete;
}

WalPosition LargeTable::replay_pos(uint8_t ks, const IndexKey& key) const {
  auto& s = const_cast<KeySpace&>(space(ks));
  const std::string ck = cell_key_for(s, key);
  Cell* c = find_cell(s, ck);
  if (c == nullptr) return WalPosition(0);
  std::lock_guard lock(row_for(s, ck));
  return c->replay_pos;
}

template <typename Fn>
void LargeTable::for_each_cell(Fn&& fn) const {
  for (const auto& [id, sp] : spaces_) {
    KeySpace& s = *sp;
    std::vector<Cell*> cells;
    if (s.config.distribution == Distribution::kUniform) {
      for (const auto& c : s.uniform) cells.push_back(c.get());
    } else {
      std::shared_lock lock(s.prefix_mu);
      for (const auto& [k, c] : s.prefixed) cells.push_back(c.get());
    }
    for (Cell* c : cells) {
      std::lock_guard lock(row_for(s, c->cell_key));
      fn(s, *c);
    }
  }
}

TableMetadata LargeTable::snapshot_metadata(WalPosition last_processed) const {
  TableMetadata md;
  md.global_replay_from = last_processed;
  for_each_cell([&](const KeySpace& s, const Cell& c) {
    if (!c.index_pos.is_none()) {
      md.cells.push_back(CellMetadata{CellRef{s.config.id, c.cell_key}, c.index_pos, c.replay_pos});
      md.global_replay_from = std::min(md.global_replay_from, c.replay_pos);
    } else {
      for (const auto& [k, slot] : c.dirty) md.global_replay_from = std::min(md.global_replay_from, slot.position);
    }
  });
  return md;
}

void LargeTable::restore_cell(const CellRef& ref, WalPosition index_pos, WalPosition replay_pos) {
  KeySpace& s = space(ref.keyspace);
  if (s.config.distribution == Distribution::kPrefixed && ref.cell_key.size() != s.config.prefix_len) {
    fail(ErrorCode::kCorruption, "cell key length does not match key space prefix");
  }
  Cell* c = find_or_create(s, ref.cell_key);
  std::lock_guard lock(row_for(s, ref.cell_key));
  c->index_pos = index_pos;
  c->replay_pos = replay_pos;
  c->loaded.reset();
  c->bloom.clear();
  c->bloom_complete = false;
}

std::vector<CellRef> LargeTable::all_cells() const {
  std::vector<CellRef> out;
  for_each_cell([&](const KeySpace& s, const Cell& c) { out.push_back(CellRef{s.config.id, c.cell_key}); });
  return out;
}

std::vector<DirtyCellInfo> LargeTable::dirty_cells() const {
  std::vector<DirtyCellInfo> out;
  for_each_cell([&](const KeySpace& s, const Cell& c) {
    if (c.dirty.empty()) return;
    DirtyCellInfo info{CellRef{s.config.id, c.cell_key}, c.dirty.size(), WalPosition::none(),
                       s.config.dirty_flush_threshold};
    for (const auto& [k, slot] : c.dirty) info.oldest = std::min(info.oldest, slot.position);
    out.push_back(std::move(info));
  });
  return out;
}

size_t LargeTable::loaded_entries() const {
  size_t total = 0;
  for_each_cell([&](const KeySpace&, const Cell& c) {
    if (c.loaded) total += c.loaded->size();
  });
  return total;
}

size_t LargeTable::evict_to(size_t budget) {
  struct Candidate {
    uint64_t last_access;
    CellRef ref;
  };
  std::vector<Candidate> candidates;
  size_t total = 0;
  for_each_cell([&](const KeySpace& s, const Cell& c) {
    if (!c.loaded) return;
    total += c.loaded->size();
    if (c.dirty.empty() && !c.index_pos.is_none() && !c.loaded->empty()) {
      candidates.push_back(Candidate{c.last_access, CellRef{s.config.id, c.cell_key}});
    }
  });
  if (total <= budget) return 0;
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) { return a.last_access < b.last_access; });
  size_t evicted = 0;
  for (const auto& cand : candidates) {
    if (total <= budget) break;
    KeySpace& s = space(cand.ref.keyspace);
    Cell* c = find_cell(s, cand.ref.cell_key);
    std::lock_guard lock(row_for(s, cand.ref.cell_key));
    if (!c->loaded || !c->dirty.empty() || c->index_pos.is_none()) continue;
    total -= std::min(total, c->loaded->size());
    c->loaded.reset();
    ++evicted;
  }
  return evicted;
}

}  // namespace walkv
