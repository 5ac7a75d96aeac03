#include "walkv/value_cache.hpp"

#include <functional>

namespace walkv {

namespace {
constexpr size_t kEntryOverhead = 64;
}

ValueCache::ValueCache(size_t capacity_bytes, size_t shard_count)
    : capacity_(capacity_bytes), shard_capacity_(capacity_bytes / (shard_count == 0 ? 1 : shard_count)) {
  if (shard_count == 0) shard_count = 1;
  for (size_t i = 0; i < shard_count; ++i) shards_.push_back(std::make_unique<Shard>());
}

std::string ValueCache::make_id(uint8_t ks, std::string_view key) {
  std::string id;
  id.reserve(1 + key.size());
  id.push_back(static_cast<char>(ks));
  id.append(key);
  return id;
}

ValueCache::Shard& ValueCache::shard_for(std::string_view id) const {
  return *shards_[std::hash<std::string_view>{}(id) % shards_.size()];
}

std::optional<std::optional<std::string>> ValueCache::get(uint8_t ks, std::string_view key) {
  if (!enabled()) return std::nullopt;
  const std::string id = make_id(ks, key);
  Shard& s = shard_for(id);
  std::lock_guard lock(s.mu);
  auto it = s.index.find(id);
  if (it == s.index.end()) return std::nullopt;
  s.lru.splice(s.lru.begin(), s.lru, it->second);
  return it->second->value;
}

uint64_t ValueCache::token(uint8_t ks, std::string_view key) const {
  if (!enabled()) return 0;
  Shard& s = shard_for(make_id(ks, key));
  std::lock_guard lock(s.mu);
  return s.generation;
}

void ValueCache::put_locked(Shard& s, std::string id, std::optional<std::string> value, uint64_t position) {
  auto it = s.index.find(id);
  if (it != s.index.end()) {
    if (it->second->position > position) return;
    auto node = it->second;
    s.bytes -= node->charge;
    s.index.erase(it);
    s.lru.erase(node);
  }
  const size_t charge = id.size() + (value ? value->size() : 0) + kEntryOverhead;
  if (charge > shard_capacity_) return;
  s.lru.push_front(Entry{std::move(id), std::move(value), position, charge});
  s.index.emplace(s.lru.front().id, s.lru.begin());
  s.bytes += charge;
  while (s.bytes > shard_capacity_) {
    Entry& victim = s.lru.back();
    s.bytes -= victim.charge;
    s.index.erase(victim.id);
    s.lru.pop_back();
  }
}

void ValueCache::fill(uint8_t ks, std::string_view key, std::string_view value, uint64_t position, uint64_t token) {
  if (!enabled()) return;
  std::string id = make_id(ks, key);
  Shard& s = shard_for(id);
  std::lock_guard lock(s.mu);
  if (s.generation != token) return;
  put_locked(s, std::move(id), std::string(value), position);
}

void ValueCache::update(uint8_t ks, std::string_view key, std::optional<std::string_view> value, uint64_t position) {
  if (!enabled()) return;
  std::string id = make_id(ks, key);
  Shard& s = shard_for(id);
  std::lock_guard lock(s.mu);
  ++s.generation;
  std::optional<std::string> v;
  if (value) v.emplace(*value);
  put_locked(s, std::move(id), std::move(v), position);
}

size_t ValueCache::size_bytes() const {
  size_t total = 0;
  for (const auto& s : shards_) {
    std::lock_guard lock(s->mu);
    total += s->bytes;
  }
  return total;
}

}  // namespace walkv
