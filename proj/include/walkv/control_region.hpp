#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "walkv/fault.hpp"
#include "walkv/file.hpp"
#include "walkv/large_table.hpp"
#include "walkv/position.hpp"

namespace walkv {

struct ControlRegion {
  uint64_t generation = 0;
  WalPosition global_replay_from{0};
  /// Relocation GC watermark: nothing below it is ever replayed.
  WalPosition gc_watermark{0};
  std::vector<CellMetadata> cells;

  friend bool operator==(const ControlRegion&, const ControlRegion&) = default;
};

std::string encode_control_payload(const ControlRegion& region);
std::optional<ControlRegion> decode_control_payload(std::string_view payload);

/// The recovery snapshot file: two fixed 64 KiB slots written alternately.
/// A slot is crc(4) | payload_len(4) | payload; the valid slot with the
/// highest generation wins.
class ControlFile {
 public:
  static constexpr size_t kSlotSize = 64 * 1024;

  ControlFile(std::filesystem::path path, FaultInjector* fault = nullptr);

  std::optional<ControlRegion> read() const;
  std::array<std::optional<ControlRegion>, 2> read_slots() const;
  /// Writes into slot generation % 2 and syncs.
  void write(const ControlRegion& region);

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  FaultInjector* fault_;
  File file_;
};

}  // namespace walkv
