// Copyright 2026 The aliasim Authors
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

#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace aliasim {

using Word = std::uint32_t;

inline constexpr unsigned kWordShift = 2;            // 4-byte words
inline constexpr std::uint32_t kWordBytes = 1u << kWordShift;
inline constexpr unsigned kBlockShift = 12;          // 4 KB blocks
inline constexpr std::uint32_t kBlockBytes = 1u << kBlockShift;
inline constexpr std::uint32_t kWordsPerBlock = kBlockBytes / kWordBytes;
inline constexpr unsigned kSectionShift = 20;        // 1 MB sections
inline constexpr std::uint32_t kBlocksPerSection = 1u << (kSectionShift - kBlockShift);
inline constexpr std::uint32_t kL1Entries = 4096;
inline constexpr std::uint32_t kL2Entries = 256;
inline constexpr std::uint32_t kL1Blocks = 4;        // a 16 KB L1 spans four blocks
inline constexpr std::uint32_t kL2TablesPerBlock = 4;

/// Raised on misuse of the simulator API (bad geometry, out-of-range address).
class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Index of a 4 KB physical block.
struct Block {
  std::uint32_t index = 0;

  constexpr auto operator<=>(const Block&) const = default;
};

/// Word-aligned physical byte address.
struct PhysAddr {
  std::uint32_t value = 0;

  constexpr auto operator<=>(const PhysAddr&) const = default;

  [[nodiscard]] constexpr Block block() const { return Block{value >> kBlockShift}; }
  [[nodiscard]] constexpr std::uint32_t word_index() const { return value >> kWordShift; }
  [[nodiscard]] constexpr PhysAddr operator+(std::uint32_t bytes) const {
    return PhysAddr{value + bytes};
  }
};

struct VirtAddr {
  std::uint32_t value = 0;

  constexpr auto operator<=>(const VirtAddr&) const = default;
};

[[nodiscard]] constexpr PhysAddr block_base(Block b) {
  return PhysAddr{b.index << kBlockShift};
}

enum class Mode : std::uint8_t { NonPrivileged, Privileged };

/// Access request presented to the MMU.
enum class AccessReq : std::uint8_t { Read, Write, Execute };

inline const char* to_string(Mode m) {
  return m == Mode::Privileged ? "PL1" : "PL0";
}

inline const char* to_string(AccessReq r) {
  switch (r) {
    case AccessReq::Read: return "rd";
    case AccessReq::Write: return "wt";
    case AccessReq::Execute: return "ex";
  }
  return "?";
}

[[nodiscard]] constexpr bool is_pow2(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

[[nodiscard]] constexpr unsigned log2u(std::uint64_t v) {
  unsigned r = 0;
  while (v > 1) {
    v >>= 1;
    ++r;
  }
  return r;
}

}  // namespace aliasim
