#include "walkv/index_format.hpp"

#include <algorithm>
#include <cstring>

#include "walkv/coding.hpp"
#include "walkv/error.hpp"

namespace walkv {

namespace {

int compare_keys(const uint8_t* a, const uint8_t* b) { return std::memcmp(a, b, kIndexKeySize); }

const uint8_t* entry_key(const char* entry) { return reinterpret_cast<const uint8_t*>(entry); }

uint64_t entry_position(const char* entry) { return decode_fixed64(entry + kIndexKeySize); }

void check_ascending(std::span<const IndexEntry> entries) {
  for (size_t i = 1; i < entries.size(); ++i) {
    if (compare_keys(entries[i - 1].key.data(), entries[i].key.data()) >= 0) {
      fail(ErrorCode::kInvalidArgument, "index entries not strictly ascending at " + std::to_string(i));
    }
  }
}

void append_entries(std::string& out, std::span<const IndexEntry> entries) {
  for (const auto& e : entries) {
    out.append(reinterpret_cast<const char*>(e.key.data()), kIndexKeySize);
    put_fixed64(out, e.position);
  }
}

// Binary search over serialized entries; corruption if not ascending.
std::optional<uint64_t> search_serialized(const char* data, size_t count, const IndexKey& key) {
  for (size_t i = 1; i < count; ++i) {
    if (compare_keys(entry_key(data + (i - 1) * kIndexEntrySize), entry_key(data + i * kIndexEntrySize)) >= 0) {
      fail(ErrorCode::kCorruption, "index window not ascending");
    }
  }
  size_t lo = 0;
  size_t hi = count;
  while (lo < hi) {
    const size_t mid = lo + (hi - lo) / 2;
    const char* e = data + mid * kIndexEntrySize;
    const int c = compare_keys(entry_key(e), key.data());
    if (c == 0) return entry_position(e);
    if (c < 0) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  return std::nullopt;
}

}  // namespace

IndexKey make_index_key(std::string_view bytes) {
  if (bytes.size() != kIndexKeySize) {
    fail(ErrorCode::kInvalidArgument, "index keys are 32 bytes, got " + std::to_string(bytes.size()));
  }
  IndexKey k;
  std::memcpy(k.data(), bytes.data(), kIndexKeySize);
  return k;
}

void MemorySource::do_read(uint64_t offset, std::span<char> out) const {
  if (offset + out.size() > data_.size()) fail(ErrorCode::kOutOfRange, "read past end of index");
  std::memcpy(out.data(), data_.data() + offset, out.size());
}

void FileRegionSource::do_read(uint64_t offset, std::span<char> out) const {
  if (offset + out.size() > length_) fail(ErrorCode::kOutOfRange, "read past end of index region");
  file_->read_exact(base_ + offset, out.data(), out.size());
}

std::string serialize_flat(std::span<const IndexEntry> entries) {
  check_ascending(entries);
  std::string out;
  out.reserve(entries.size() * kIndexEntrySize);
  append_entries(out, entries);
  return out;
}

std::vector<IndexEntry> deserialize_flat(std::string_view bytes) {
  MemorySource src(bytes);
  return load_all(src);
}

std::vector<IndexEntry> load_all(const ByteSource& source) {
  const uint64_t size = source.size();
  if (size % kIndexEntrySize != 0) fail(ErrorCode::kCorruption, "index length not a multiple of 40");
  std::string buf(size, '\0');
  if (size > 0) source.read(0, buf);
  std::vector<IndexEntry> out(size / kIndexEntrySize);
  for (size_t i = 0; i < out.size(); ++i) {
    const char* e = buf.data() + i * kIndexEntrySize;
    std::memcpy(out[i].key.data(), e, kIndexKeySize);
    out[i].position = entry_position(e);
    if (i > 0 && compare_keys(out[i - 1].key.data(), out[i].key.data()) >= 0) {
      fail(ErrorCode::kCorruption, "index entries not ascending");
    }
  }
  return out;
}

uint64_t estimate_entry_index(std::span<const uint8_t> key, uint64_t n, size_t skip_prefix) {
  if (n == 0) return 0;
  uint64_t fraction = 0;
  for (size_t i = 0; i < 8; ++i) {
    const size_t at = skip_prefix + i;
    fraction = (fraction << 8) | (at < key.size() ? key[at] : 0);
  }
  const auto scaled = static_cast<uint64_t>((static_cast<unsigned __int128>(fraction) * n) >> 64);
  return std::min(scaled, n - 1);
}

LookupOutcome optimistic_lookup(const ByteSource& source, uint64_t n, const IndexKey& key, const WindowConfig& cfg,
                                size_t skip_prefix) {
  if (cfg.window_entries < 2) fail(ErrorCode::kInvalidArgument, "window must hold at least two entries");
  LookupOutcome outcome;
  if (n == 0) return outcome;
  const uint64_t width = std::min<uint64_t>(cfg.window_entries, n);
  const uint64_t estimate = estimate_entry_index(key, n, skip_prefix);
  uint64_t start = estimate >= width / 2 ? estimate - width / 2 : 0;
  if (start + width > n) start = n - width;

  thread_local std::string window;
  window.resize(width * kIndexEntrySize);
  for (;;) {
    ++outcome.iterations;
    source.read(start * kIndexEntrySize, window);
    const char* data = window.data();
    if (compare_keys(key.data(), entry_key(data)) < 0) {
      if (start == 0) return outcome;
      start = start > width - 1 ? start - (width - 1) : 0;
      continue;
    }
    if (compare_keys(key.data(), entry_key(data + (width - 1) * kIndexEntrySize)) > 0) {
      if (start + width == n) return outcome;
      start = std::min(n - width, start + (width - 1));
      continue;
    }
    outcome.position = search_serialized(data, width, key);
    return outcome;
  }
}

std::optional<uint64_t> binary_search_entries(std::span<const IndexEntry> entries, const IndexKey& key) {
  auto it = std::lower_bound(entries.begin(), entries.end(), key,
                             [](const IndexEntry& e, const IndexKey& k) { return e.key < k; });
  if (it != entries.end() && it->key == key) return it->position;
  return std::nullopt;
}

std::string serialize_header(std::span<const IndexEntry> entries) {
  check_ascending(entries);
  std::array<uint64_t, kHeaderBuckets> counts{};
  for (const auto& e : entries) ++counts[header_bucket(e.key)];
  std::string out;
  out.reserve(kHeaderSize + entries.size() * kIndexEntrySize);
  uint64_t offset = 0;
  for (size_t b = 0; b < kHeaderBuckets; ++b) {
    put_fixed64(out, offset);
    offset += counts[b] * kIndexEntrySize;
  }
  append_entries(out, entries);
  return out;
}

HeaderLookupOutcome header_lookup(const ByteSource& source, const IndexKey& key) {
  const uint64_t size = source.size();
  if (size < kHeaderSize) fail(ErrorCode::kCorruption, "header index shorter than its header");
  const uint64_t data_size = size - kHeaderSize;
  const size_t bucket = header_bucket(key);
  HeaderLookupOutcome outcome;

  char slots[16];
  const size_t slot_bytes = bucket + 1 < kHeaderBuckets ? 16 : 8;
  source.read(bucket * 8, std::span<char>(slots, slot_bytes));
  ++outcome.reads;
  const uint64_t begin = decode_fixed64(slots);
  const uint64_t end = slot_bytes == 16 ? decode_fixed64(slots + 8) : data_size;
  if (begin > end || end > data_size || begin % kIndexEntrySize != 0 || end % kIndexEntrySize != 0) {
    fail(ErrorCode::kCorruption, "bad header bucket bounds");
  }

  thread_local std::string region;
  region.resize(end - begin);
  source.read(kHeaderSize + begin, region);
  ++outcome.reads;
  outcome.position = search_serialized(region.data(), region.size() / kIndexEntrySize, key);
  return outcome;
}

}  // namespace walkv
