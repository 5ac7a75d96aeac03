#pragma once

#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace walkv {

/// Byte-bounded LRU over (key space, key) -> value. Entries remember the log
/// position they came from so an older value never replaces a newer one.
/// A cached deletion is an entry without a value.
class ValueCache {
 public:
  explicit ValueCache(size_t capacity_bytes, size_t shard_count = 16);

  bool enabled() const { return capacity_ > 0; }

  /// Outer empty: miss. Inner empty: the key is known deleted.
  std::optional<std::optional<std::string>> get(uint8_t ks, std::string_view key);

  /// Read path. Take a token before consulting the index, then fill only if
  /// no write touched the shard in between.
  uint64_t token(uint8_t ks, std::string_view key) const;
  void fill(uint8_t ks, std::string_view key, std::string_view value, uint64_t position, uint64_t token);

  /// Write path, called after the index update.
  void update(uint8_t ks, std::string_view key, std::optional<std::string_view> value, uint64_t position);

  size_t size_bytes() const;

 private:
  struct Entry {
    std::string id;
    std::optional<std::string> value;
    uint64_t position = 0;
    size_t charge = 0;
  };
  struct Shard {
    mutable std::mutex mu;
    std::list<Entry> lru;  // front = most recent
    std::unordered_map<std::string_view, std::list<Entry>::iterator> index;
    size_t bytes = 0;
    uint64_t generation = 0;
  };

  static std::string make_id(uint8_t ks, std::string_view key);
  Shard& shard_for(std::string_view id) const;
  void put_locked(Shard& s, std::string id, std::optional<std::string> value, uint64_t position);

  size_t capacity_;
  size_t shard_capacity_;
  std::vector<std::unique_ptr<Shard>> shards_;
};

}  // namespace walkv
