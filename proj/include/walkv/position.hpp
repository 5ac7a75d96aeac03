#pragma once

#include <compare>
#include <cstdint>
#include <limits>
#include <ostream>

namespace walkv {

/// Byte offset into a logical append-only log. Offsets are never reused
/// within one log's lifetime; the all-ones value means "no position".
struct WalPosition {
  uint64_t offset = 0;

  static constexpr uint64_t kNoneOffset = std::numeric_limits<uint64_t>::max();

  constexpr WalPosition() = default;
  constexpr explicit WalPosition(uint64_t off) : offset(off) {}

  static constexpr WalPosition none() { return WalPosition(kNoneOffset); }
  constexpr bool is_none() const { return offset == kNoneOffset; }

  constexpr WalPosition operator+(uint64_t n) const { return WalPosition(offset + n); }

  friend constexpr auto operator<=>(WalPosition, WalPosition) = default;
};

inline std::ostream& operator<<(std::ostream& os, WalPosition p) {
  if (p.is_none()) return os << "none";
  return os << p.offset;
}

}  // namespace walkv
