#include "walkv/coding.hpp"

#include <zlib.h>

#include <algorithm>

namespace walkv {

uint32_t crc32(const char* data, size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes a uInt length; feed large buffers in pieces.
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<size_t>(n, 1u << 30));
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<uint32_t>(crc);
}

uint32_t crc32(std::string_view data) { return crc32(data.data(), data.size()); }

}  // namespace walkv
