#include "walkv/control_region.hpp"

#include "walkv/coding.hpp"
#include "walkv/error.hpp"

namespace walkv {

std::string encode_control_payload(const ControlRegion& region) {
  std::string out;
  put_fixed64(out, region.generation);
  put_fixed64(out, region.global_replay_from.offset);
  put_fixed64(out, region.gc_watermark.offset);
  put_fixed32(out, static_cast<uint32_t>(region.cells.size()));
  for (const auto& c : region.cells) {
    out.push_back(static_cast<char>(c.cell.keyspace));
    put_fixed16(out, static_cast<uint16_t>(c.cell.cell_key.size()));
    out.append(c.cell.cell_key);
    put_fixed64(out, c.flushed_index_pos.offset);
    put_fixed64(out, c.replay_pos.offset);
  }
  return out;
}

std::optional<ControlRegion> decode_control_payload(std::string_view p) {
  if (p.size() < 28) return std::nullopt;
  ControlRegion r;
  r.generation = decode_fixed64(p.data());
  r.global_replay_from = WalPosition(decode_fixed64(p.data() + 8));
  r.gc_watermark = WalPosition(decode_fixed64(p.data() + 16));
  const uint32_t count = decode_fixed32(p.data() + 24);
  size_t at = 28;
  for (uint32_t i = 0; i < count; ++i) {
    if (at + 3 > p.size()) return std::nullopt;
    CellMetadata c;
    c.cell.keyspace = static_cast<uint8_t>(p[at]);
    const uint16_t klen = decode_fixed16(p.data() + at + 1);
    at += 3;
    if (at + klen + 16 > p.size()) return std::nullopt;
    c.cell.cell_key.assign(p.data() + at, klen);
    at += klen;
    c.flushed_index_pos = WalPosition(decode_fixed64(p.data() + at));
    c.replay_pos = WalPosition(decode_fixed64(p.data() + at + 8));
    at += 16;
    r.cells.push_back(std::move(c));
  }
  if (at != p.size()) return std::nullopt;
  return r;
}

ControlFile::ControlFile(std::filesystem::path path, FaultInjector* fault) : path_(std::move(path)), fault_(fault) {
  if (std::filesystem::exists(path_)) {
    file_ = File::open_existing(path_, fault_, "control");
    if (file_.size() < 2 * kSlotSize) file_.truncate(2 * kSlotSize);
  } else {
    file_ = File::create(path_, fault_, "control");
    file_.truncate(2 * kSlotSize);
    file_.sync();
    sync_directory(path_.parent_path(), fault_);
  }
}

std::array<std::optional<ControlRegion>, 2> ControlFile::read_slots() const {
  std::array<std::optional<ControlRegion>, 2> out;
  std::string buf(kSlotSize, '\0');
  for (size_t slot = 0; slot < 2; ++slot) {
    const size_t got = file_.read_at(slot * kSlotSize, buf.data(), kSlotSize);
    if (got < 8) continue;
    const uint32_t crc = decode_fixed32(buf.data());
    const uint32_t len = decode_fixed32(buf.data() + 4);
    if (len == 0 || 8 + static_cast<size_t>(len) > got) continue;
    if (crc32(buf.data() + 8, len) != crc) continue;
    auto region = decode_control_payload(std::string_view(buf.data() + 8, len));
    if (region && region->generation % 2 == slot) out[slot] = std::move(region);
  }
  return out;
}

std::optional<ControlRegion> ControlFile::read() const {
  auto slots = read_slots();
  if (slots[0] && slots[1]) return slots[0]->generation > slots[1]->generation ? slots[0] : slots[1];
  return slots[0] ? slots[0] : slots[1];
}

void ControlFile::write(const ControlRegion& region) {
  const std::string payload = encode_control_payload(region);
  if (payload.size() + 8 > kSlotSize) {
    fail(ErrorCode::kInvalidArgument, "control region overflow: " + std::to_string(region.cells.size()) + " cells");
  }
  std::string slot;
  slot.reserve(8 + payload.size());
  put_fixed32(slot, crc32(payload));
  put_fixed32(slot, static_cast<uint32_t>(payload.size()));
  slot.append(payload);
  file_.write_at((region.generation % 2) * kSlotSize, slot.data(), slot.size());
  file_.sync();
}

}  // namespace walkv
