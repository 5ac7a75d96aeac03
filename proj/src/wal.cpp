#include "walkv/wal.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <vector>

#include "walkv/coding.hpp"
#include "walkv/error.hpp"

namespace walkv {

// ---------------------------------------------------------------------------
// Records

WalRecord WalRecord::put(uint8_t keyspace, std::string_view key, std::string_view value) {
  return WalRecord{RecordKind::kPut, keyspace, std::string(key), std::string(value)};
}

WalRecord WalRecord::tombstone(uint8_t keyspace, std::string_view key) {
  return WalRecord{RecordKind::kTombstone, keyspace, std::string(key), {}};
}

WalRecord WalRecord::batch_start(uint32_t count) {
  WalRecord r{RecordKind::kBatchStart, 0, {}, {}};
  put_fixed32(r.value, count);
  return r;
}

WalRecord WalRecord::relocated(uint8_t keyspace, std::string_view key, WalPosition original,
                               const std::optional<std::string_view>& value) {
  WalRecord r{RecordKind::kRelocated, keyspace, std::string(key), {}};
  r.value.reserve(9 + (value ? value->size() : 0));
  put_fixed64(r.value, original.offset);
  r.value.push_back(value ? 0 : 1);
  if (value) r.value.append(*value);
  return r;
}

void WalRecord::encode_to(std::string& out) const {
  if (key.size() > kMaxKeySize) fail(ErrorCode::kInvalidArgument, "key too long");
  const size_t start = out.size();
  const uint32_t payload_len = static_cast<uint32_t>(4 + key.size() + value.size());
  out.resize(start + kFrameHeaderSize);
  char* h = out.data() + start;
  encode_fixed32(h + 4, payload_len);
  h[8] = static_cast<char>(kind);
  h[9] = static_cast<char>(keyspace);
  encode_fixed16(h + 10, static_cast<uint16_t>(key.size()));
  out.append(key);
  out.append(value);
  const uint32_t crc = crc32(out.data() + start + 4, 4 + payload_len);
  encode_fixed32(out.data() + start, crc);
}

std::string WalRecord::encode() const {
  std::string out;
  out.reserve(encoded_size());
  encode_to(out);
  return out;
}

uint32_t WalRecord::batch_count() const {
  if (kind != RecordKind::kBatchStart || value.size() != 4) fail(ErrorCode::kCorruption, "not a batch marker");
  return decode_fixed32(value.data());
}

WalPosition WalRecord::relocated_from() const {
  if (kind != RecordKind::kRelocated || value.size() < 9) fail(ErrorCode::kCorruption, "not a relocated record");
  return WalPosition(decode_fixed64(value.data()));
}

bool WalRecord::deletes_key() const {
  if (kind == RecordKind::kTombstone) return true;
  if (kind == RecordKind::kRelocated) return value.size() >= 9 && value[8] != 0;
  return false;
}

std::string_view WalRecord::user_value() const {
  if (kind == RecordKind::kPut) return value;
  if (kind == RecordKind::kRelocated && value.size() >= 9) return std::string_view(value).substr(9);
  return {};
}

FrameStatus decode_frame(std::string_view buf, WalRecord* out, size_t* frame_len) {
  if (buf.size() < kFrameHeaderSize) return FrameStatus::kTruncated;
  const uint32_t crc = decode_fixed32(buf.data());
  const uint32_t payload_len = decode_fixed32(buf.data() + 4);
  if (crc == 0 && payload_len == 0) return FrameStatus::kZero;
  if (payload_len < 4) return FrameStatus::kCorrupt;
  const size_t len = 8 + static_cast<size_t>(payload_len);
  if (frame_len != nullptr) *frame_len = len;
  if (buf.size() < len) return FrameStatus::kTruncated;
  if (crc32(buf.data() + 4, 4 + payload_len) != crc) return FrameStatus::kCorrupt;
  const auto kind = static_cast<uint8_t>(buf[8]);
  if (kind < 1 || kind > 4) return FrameStatus::kCorrupt;
  const uint16_t key_len = decode_fixed16(buf.data() + 10);
  if (4 + static_cast<size_t>(key_len) > payload_len) return FrameStatus::kCorrupt;
  if (out != nullptr) {
    out->kind = static_cast<RecordKind>(kind);
    out->keyspace = static_cast<uint8_t>(buf[9]);
    out->key.assign(buf.data() + kFrameHeaderSize, key_len);
    out->value.assign(buf.data() + kFrameHeaderSize + key_len, len - kFrameHeaderSize - key_len);
  }
  return FrameStatus::kOk;
}

// ---------------------------------------------------------------------------
// Tracker

void PositionTracker::mark(uint64_t start, uint64_t end) {
  if (end <= start) return;
  std::lock_guard lock(mu_);
  uint64_t contiguous = contiguous_.load(std::memory_order_relaxed);
  if (start <= contiguous) {
    contiguous = std::max(contiguous, end);
  } else {
    auto next = pending_.lower_bound(start);
    if (next != pending_.end() && next->first == end) {
      end = next->second;
      next = pending_.erase(next);
    }
    if (next != pending_.begin()) {
      auto prev = std::prev(next);
      if (prev->second == start) {
        prev->second = end;
        return;
      }
    }
    pending_.emplace(start, end);
    return;
  }
  while (!pending_.empty() && pending_.begin()->first <= contiguous) {
    contiguous = std::max(contiguous, pending_.begin()->second);
    pending_.erase(pending_.begin());
  }
  contiguous_.store(contiguous, std::memory_order_release);
}

void PositionTracker::reset(uint64_t base) {
  std::lock_guard lock(mu_);
  pending_.clear();
  contiguous_.store(base, std::memory_order_release);
}

size_t PositionTracker::pending_ranges() const {
  std::lock_guard lock(mu_);
  return pending_.size();
}

// ---------------------------------------------------------------------------
// Iterator

namespace {
constexpr size_t kReadChunk = 1 << 20;
}

WalIterator::WalIterator(const Wal& wal, uint64_t start, uint64_t limit)
    : wal_(&wal), cursor_(std::max(start, wal.first_position().offset)), limit_(limit), end_(cursor_) {}

bool WalIterator::fill(uint64_t at, size_t need) {
  if (at >= buf_start_ && at + need <= buf_start_ + buf_.size()) return true;
  const uint64_t fs = wal_->config_.fragment_size;
  auto frag = wal_->fragment(at / fs);
  if (!frag) return false;
  const uint64_t off = at % fs;
  const size_t want = static_cast<size_t>(std::min<uint64_t>(std::max(need, kReadChunk), fs - off));
  if (want < need) return false;
  buf_.resize(want);
  const size_t got = frag->file.read_at(off, buf_.data(), want);
  buf_.resize(got);
  buf_start_ = at;
  return got >= need;
}

std::optional<WalEntry> WalIterator::next() {
  const uint64_t fs = wal_->config_.fragment_size;
  while (!done_ && cursor_ < limit_) {
    const uint64_t off = cursor_ % fs;
    const uint64_t next_fragment = cursor_ - off + fs;
    if (fs - off < kFrameHeaderSize) {
      cursor_ = next_fragment;
      continue;
    }
    if (!fill(cursor_, kFrameHeaderSize)) break;
    auto view = std::string_view(buf_).substr(cursor_ - buf_start_);
    WalEntry entry;
    size_t len = 0;
    FrameStatus st = decode_frame(view, &entry.record, &len);
    if (st == FrameStatus::kZero) {
      // Padding or unwritten space: the rest of this fragment is empty.
      if (!wal_->fragment(next_fragment / fs)) break;
      cursor_ = next_fragment;
      continue;
    }
    if (st == FrameStatus::kTruncated) {
      if (off + len > fs || !fill(cursor_, len)) break;
      view = std::string_view(buf_).substr(cursor_ - buf_start_);
      st = decode_frame(view, &entry.record, &len);
    }
    if (st != FrameStatus::kOk) break;
    entry.position = WalPosition(cursor_);
    entry.frame_len = len;
    cursor_ += len;
    end_ = cursor_;
    return entry;
  }
  done_ = true;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Wal

Wal::Wal(std::filesystem::path dir, WalConfig config, FaultInjector* fault, std::string tag)
    : dir_(std::move(dir)), config_(config), fault_(fault), tag_(std::move(tag)) {
  const uint64_t fs = config_.fragment_size;
  if (fs < 64 || (fs & (fs - 1)) != 0) {
    fail(ErrorCode::kInvalidArgument, "fragment size must be a power of two >= 64");
  }
  std::filesystem::create_directories(dir_);
  for (const auto& de : std::filesystem::directory_iterator(dir_)) {
    const std::string name = de.path().filename().string();
    uint64_t start = 0;
    char suffix[8] = {};
    if (name.size() != 20 || std::sscanf(name.c_str(), "%16" SCNx64 ".%3s", &start, suffix) != 2 ||
        std::string_view(suffix) != "wal") {
      continue;
    }
    if (start % fs != 0) fail(ErrorCode::kCorruption, "misaligned fragment " + name);
    File f = File::open_existing(de.path(), fault_, tag_);
    const uint64_t size = f.size();
    if (size > fs) fail(ErrorCode::kCorruption, "oversized fragment " + name);
    if (size < fs) f.truncate(fs);
    const uint64_t index = start / fs;
    fragments_.emplace(index, std::make_shared<Fragment>(Fragment{index, std::move(f)}));
  }
  if (!fragments_.empty()) {
    const uint64_t first = fragments_.begin()->first * fs;
    // Until recovery calls reset_tail, every existing byte is readable.
    tail_ = (fragments_.rbegin()->first + 1) * fs;
    synced_ = first;
    tracker_.reset(first);
    highest_created_ = static_cast<int64_t>(fragments_.rbegin()->first);
  }
}

Wal::~Wal() { stop_background(); }

std::filesystem::path Wal::fragment_path(uint64_t index) const {
  char name[32];
  std::snprintf(name, sizeof(name), "%016" PRIx64 ".wal", index * config_.fragment_size);
  return dir_ / name;
}

std::shared_ptr<Wal::Fragment> Wal::fragment(uint64_t index) const {
  std::shared_lock lock(fragments_mu_);
  auto it = fragments_.find(index);
  return it == fragments_.end() ? nullptr : it->second;
}

std::shared_ptr<Wal::Fragment> Wal::fragment_for(uint64_t offset) const {
  return fragment(offset / config_.fragment_size);
}

void Wal::ensure_fragments(uint64_t index) {
  const int64_t want = static_cast<int64_t>(index + config_.prealloc_fragments);
  if (highest_created_.load(std::memory_order_acquire) >= want) return;
  std::lock_guard lock(create_mu_);
  for (uint64_t i = index; static_cast<int64_t>(i) <= want; ++i) {
    if (fragment(i)) continue;
    File f = File::create(fragment_path(i), fault_, tag_);
    f.truncate(config_.fragment_size);
    {
      std::unique_lock wlock(fragments_mu_);
      fragments_.emplace(i, std::make_shared<Fragment>(Fragment{i, std::move(f)}));
    }
    dir_dirty_ = true;
  }
  int64_t cur = highest_created_.load();
  while (cur < want && !highest_created_.compare_exchange_weak(cur, want)) {
  }
}

WalPosition Wal::allocate(size_t record_len) {
  if (closed_.load(std::memory_order_acquire)) fail(ErrorCode::kClosed, "log closed");
  const uint64_t fs = config_.fragment_size;
  if (record_len == 0 || record_len > fs) {
    fail(ErrorCode::kInvalidArgument, "record length " + std::to_string(record_len) + " does not fit a fragment");
  }
  uint64_t cur = tail_.load(std::memory_order_relaxed);
  uint64_t start = 0;
  for (;;) {
    start = cur;
    const uint64_t fragment_end = (cur / fs + 1) * fs;
    if (cur + record_len > fragment_end) start = fragment_end;
    if (tail_.compare_exchange_weak(cur, start + record_len, std::memory_order_acq_rel)) break;
  }
  // Fragment-tail remainder: nothing is written there, so it counts as processed.
  if (start != cur) tracker_.mark(cur, start);
  ensure_fragments(start / fs);
  return WalPosition(start);
}

void Wal::write_at(WalPosition position, const WalRecord& record) {
  thread_local std::string buf;
  buf.clear();
  record.encode_to(buf);
  write_bytes_at(position, buf);
}

void Wal::write_bytes_at(WalPosition position, std::string_view frames) {
  const uint64_t fs = config_.fragment_size;
  const uint64_t off = position.offset % fs;
  if (off + frames.size() > fs) fail(ErrorCode::kInvalidArgument, "write crosses a fragment boundary");
  auto frag = fragment_for(position.offset);
  if (!frag) fail(ErrorCode::kOutOfRange, "no fragment for position " + std::to_string(position.offset));
  frag->file.write_at(off, frames.data(), frames.size());
}

void Wal::check_range(uint64_t offset, size_t len) const {
  if (offset < first_position().offset || offset + len > tail_.load(std::memory_order_acquire)) {
    fail(ErrorCode::kOutOfRange, "position " + std::to_string(offset) + " outside live log");
  }
}

WalRecord Wal::read_at(WalPosition position, size_t* frame_len) const {
  check_range(position.offset, kFrameHeaderSize);
  const uint64_t fs = config_.fragment_size;
  auto frag = fragment_for(position.offset);
  if (!frag) fail(ErrorCode::kOutOfRange, "fragment collected for " + std::to_string(position.offset));
  const uint64_t off = position.offset % fs;
  thread_local std::string buf;
  buf.resize(static_cast<size_t>(std::min<uint64_t>(4096, fs - off)));
  buf.resize(frag->file.read_at(off, buf.data(), buf.size()));
  WalRecord rec;
  size_t len = 0;
  FrameStatus st = decode_frame(buf, &rec, &len);
  if (st == FrameStatus::kTruncated && len > buf.size() && off + len <= fs) {
    buf.resize(len);
    buf.resize(frag->file.read_at(off, buf.data(), len));
    st = decode_frame(buf, &rec, &len);
  }
  if (st != FrameStatus::kOk) {
    fail(ErrorCode::kCorruption, "bad frame at " + std::to_string(position.offset));
  }
  if (frame_len != nullptr) *frame_len = len;
  return rec;
}

void Wal::read_raw(WalPosition position, char* out, size_t len) const {
  check_range(position.offset, len);
  const uint64_t fs = config_.fragment_size;
  if (position.offset % fs + len > fs) fail(ErrorCode::kOutOfRange, "raw read crosses fragment");
  auto frag = fragment_for(position.offset);
  if (!frag) fail(ErrorCode::kOutOfRange, "fragment collected for " + std::to_string(position.offset));
  frag->file.read_exact(position.offset % fs, out, len);
}

void Wal::mark_processed(WalPosition position, size_t record_len) {
  tracker_.mark(position.offset, position.offset + record_len);
}

WalPosition Wal::first_position() const {
  std::shared_lock lock(fragments_mu_);
  if (fragments_.empty()) {
    const uint64_t t = tail_.load(std::memory_order_acquire);
    return WalPosition(t - t % config_.fragment_size);
  }
  return WalPosition(fragments_.begin()->first * config_.fragment_size);
}

void Wal::sync() {
  std::lock_guard lock(sync_mu_);
  const uint64_t target = tracker_.last_processed();
  const uint64_t fs = config_.fragment_size;
  const uint64_t from = synced_.load();
  if (target > from) {
    for (uint64_t i = from / fs; i <= (target - 1) / fs; ++i) {
      if (auto frag = fragment(i)) frag->file.sync();
    }
  }
  if (dir_dirty_.exchange(false)) sync_directory(dir_, fault_);
  if (target > from) synced_.store(target, std::memory_order_release);
}

size_t Wal::gc_before(WalPosition position) {
  const uint64_t fs = config_.fragment_size;
  std::vector<std::shared_ptr<Fragment>> doomed;
  {
    std::unique_lock lock(fragments_mu_);
    while (!fragments_.empty() && (fragments_.begin()->first + 1) * fs <= position.offset) {
      doomed.push_back(fragments_.begin()->second);
      fragments_.erase(fragments_.begin());
    }
  }
  for (const auto& frag : doomed) remove_file(fragment_path(frag->index), fault_, tag_);
  if (!doomed.empty()) sync_directory(dir_, fault_);
  return doomed.size();
}

void Wal::reset_tail(WalPosition position) {
  const uint64_t fs = config_.fragment_size;
  const uint64_t index = position.offset / fs;
  std::vector<std::shared_ptr<Fragment>> beyond;
  {
    std::unique_lock lock(fragments_mu_);
    for (auto it = fragments_.upper_bound(index); it != fragments_.end();) {
      beyond.push_back(it->second);
      it = fragments_.erase(it);
    }
  }
  for (const auto& frag : beyond) remove_file(fragment_path(frag->index), fault_, tag_);
  if (auto frag = fragment(index)) {
    // Zero everything past the cursor so stale frames can never be replayed.
    frag->file.truncate(position.offset % fs);
    frag->file.truncate(fs);
  }
  {
    std::shared_lock lock(fragments_mu_);
    for (const auto& [i, frag] : fragments_) frag->file.sync();
    highest_created_ = fragments_.empty() ? -1 : static_cast<int64_t>(fragments_.rbegin()->first);
  }
  tail_.store(position.offset);
  tracker_.reset(position.offset);
  synced_.store(position.offset);
  ensure_fragments(index);
  sync_directory(dir_, fault_);
  dir_dirty_ = false;
}

void Wal::start_background_sync() {
  std::lock_guard lock(bg_mu_);
  if (syncer_.joinable()) return;
  bg_stop_ = false;
  syncer_ = std::thread([this] {
    std::unique_lock lock(bg_mu_);
    while (!bg_stop_) {
      bg_cv_.wait_for(lock, config_.sync_interval, [this] { return bg_stop_; });
      if (bg_stop_) break;
      lock.unlock();
      try {
        sync();
      } catch (const SimulatedCrash&) {
        return;
      } catch (const Error&) {
        // I/O failure is fatal for durability; the next foreground sync reports it.
      }
      lock.lock();
    }
  });
}

void Wal::stop_background() {
  {
    std::lock_guard lock(bg_mu_);
    bg_stop_ = true;
  }
  bg_cv_.notify_all();
  if (syncer_.joinable()) syncer_.join();
}

void Wal::close() { closed_.store(true, std::memory_order_release); }

uint64_t Wal::disk_bytes() const {
  std::shared_lock lock(fragments_mu_);
  uint64_t total = 0;
  for (const auto& [i, frag] : fragments_) total += frag->file.allocated_bytes();
  return total;
}

size_t Wal::fragment_count() const {
  std::shared_lock lock(fragments_mu_);
  return fragments_.size();
}

std::map<uint64_t, std::filesystem::path> Wal::fragment_files() const {
  std::shared_lock lock(fragments_mu_);
  std::map<uint64_t, std::filesystem::path> out;
  for (const auto& [i, frag] : fragments_) out.emplace(i * config_.fragment_size, fragment_path(i));
  return out;
}

}  // namespace walkv
