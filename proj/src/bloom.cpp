#include "walkv/bloom.hpp"

#include <functional>

namespace walkv {

namespace {

uint64_t mix64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

}  // namespace

BloomFilter::BloomFilter(size_t initial_keys, uint32_t bits_per_key, uint32_t hashes)
    : initial_keys_(initial_keys == 0 ? 1 : initial_keys), bits_per_key_(bits_per_key), hashes_(hashes) {}

void BloomFilter::add_layer(size_t capacity) {
  Layer layer;
  layer.capacity = capacity;
  layer.words.assign((capacity * bits_per_key_ + 63) / 64, 0);
  layers_.push_back(std::move(layer));
}

void BloomFilter::insert(std::string_view key) {
  if (layers_.empty()) {
    add_layer(initial_keys_);
  } else if (layers_.back().count >= layers_.back().capacity) {
    add_layer(layers_.back().capacity * 2);
  }
  Layer& layer = layers_.back();
  const uint64_t bits = layer.words.size() * 64;
  const uint64_t h1 = std::hash<std::string_view>{}(key);
  const uint64_t h2 = mix64(h1) | 1;
  for (uint32_t i = 0; i < hashes_; ++i) {
    const uint64_t bit = (h1 + i * h2) % bits;
    layer.words[bit / 64] |= 1ull << (bit % 64);
  }
  ++layer.count;
  ++inserted_;
}

bool BloomFilter::may_contain(std::string_view key) const {
  if (layers_.empty()) return false;
  const uint64_t h1 = std::hash<std::string_view>{}(key);
  const uint64_t h2 = mix64(h1) | 1;
  for (const Layer& layer : layers_) {
    const uint64_t bits = layer.words.size() * 64;
    bool all = true;
    for (uint32_t i = 0; i < hashes_ && all; ++i) {
      const uint64_t bit = (h1 + i * h2) % bits;
      all = (layer.words[bit / 64] >> (bit % 64)) & 1;
    }
    if (all) return true;
  }
  return false;
}

void BloomFilter::clear() {
  layers_.clear();
  inserted_ = 0;
}

size_t BloomFilter::memory_bytes() const {
  size_t total = 0;
  for (const Layer& layer : layers_) total += layer.words.size() * 8;
  return total;
}

}  // namespace walkv
