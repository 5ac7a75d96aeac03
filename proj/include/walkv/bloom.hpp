#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace walkv {

/// Growable bloom filter: a chain of fixed-size layers, each sized for twice
/// the keys of the one before. Inserts go to the newest layer; queries check
/// every layer, so nothing once inserted is ever reported absent.
class BloomFilter {
 public:
  explicit BloomFilter(size_t initial_keys = 512, uint32_t bits_per_key = 10, uint32_t hashes = 7);

  void insert(std::string_view key);
  bool may_contain(std::string_view key) const;
  void clear();

  size_t inserted() const { return inserted_; }
  size_t memory_bytes() const;

 private:
  struct Layer {
    std::vector<uint64_t> words;
    size_t capacity = 0;
    size_t count = 0;
  };

  void add_layer(size_t capacity);

  size_t initial_keys_;
  uint32_t bits_per_key_;
  uint32_t hashes_;
  size_t inserted_ = 0;
  std::vector<Layer> layers_;
};

}  // namespace walkv
