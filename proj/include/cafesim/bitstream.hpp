// Copyright 2026 The cafesim Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================
#ifndef CAFESIM_BITSTREAM_HPP_
#define CAFESIM_BITSTREAM_HPP_

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cafesim/errors.hpp"

namespace cafesim {

/// Appends fields MSB-first into a byte buffer. The final partial byte is
/// zero-padded.
class BitWriter {
 public:
  void write(std::uint64_t value, unsigned nbits) {
    while (nbits > 0) {
      if (used_ == 0) bytes_.push_back(0);
      const unsigned room = 8 - used_;
      const unsigned take = nbits < room ? nbits : room;
      const auto chunk =
          static_cast<std::uint8_t>((value >> (nbits - take)) & ((1u << take) - 1u));
      bytes_.back() |= static_cast<std::uint8_t>(chunk << (room - take));
      used_ = (used_ + take) % 8;
      nbits -= take;
      bit_count_ += take;
    }
  }

  /// IEEE-754 single, little-endian byte order.
  void write_f32(float f) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int b = 0; b < 4; ++b) write((bits >> (8 * b)) & 0xffu, 8);
  }

  std::uint64_t bit_count() const { return bit_count_; }
  std::vector<std::uint8_t> take() && { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
  unsigned used_ = 0;
  std::uint64_t bit_count_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t read(unsigned nbits) {
    if (pos_ + nbits > bytes_.size() * 8) throw CorruptPayload("bit stream truncated");
    std::uint64_t v = 0;
    while (nbits > 0) {
      const std::size_t byte = pos_ / 8;
      const unsigned off = pos_ % 8;
      const unsigned room = 8 - off;
      const unsigned take = nbits < room ? nbits : room;
      const unsigned chunk = (bytes_[byte] >> (room - take)) & ((1u << take) - 1u);
      v = (v << take) | chunk;
      pos_ += take;
      nbits -= take;
    }
    return v;
  }

  float read_f32() {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(read(8)) << (8 * b);
    return std::bit_cast<float>(bits);
  }

  std::uint64_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::uint64_t pos_ = 0;
};

/// Width of an index field able to address [0, n): ceil(log2 n), 0 for n <= 1.
constexpr unsigned index_bits(std::uint64_t n) {
  return n <= 1 ? 0u : static_cast<unsigned>(std::bit_width(n - 1));
}

}  // namespace cafesim

#endif  // CAFESIM_BITSTREAM_HPP_
