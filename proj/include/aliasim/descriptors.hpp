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

// Short-descriptor page-table formats.
//
// L1 entry (4096 per table, one per 1 MB of virtual space):
//   [1:0] 00 fault, 01 page table, 10 section, 11 reserved
//   page table: [31:10] L2 base, [8:5] domain
//   section:    [31:20] base, [15] AP[2], [11:10] AP[1:0], [8:5] domain,
//               [4] XN, [3] C, [2] B; [18] set selects a supersection
// L2 entry (256 per 1 KB table, one per 4 KB page):
//   [1:0] 00 fault, 01 large page, 1x small page
//   small page: [31:12] base, [9] AP[2], [5:4] AP[1:0], [3] C, [2] B, [0] XN
//
// Supersections, large pages, AP = 100 and L1 type 11 are outside the
// supported subset and decode as Unpredictable.

#include <cstdint>

#include "aliasim/types.hpp"

namespace aliasim {

/// Three-bit access-permission field AP[2:0].
struct AccessPerm {
  std::uint8_t bits = 0;

  friend bool operator==(const AccessPerm&, const AccessPerm&) = default;

  static constexpr AccessPerm none() { return {0b000}; }
  static constexpr AccessPerm priv_rw() { return {0b001}; }
  static constexpr AccessPerm priv_rw_user_ro() { return {0b010}; }
  static constexpr AccessPerm all_rw() { return {0b011}; }
  static constexpr AccessPerm reserved() { return {0b100}; }
  static constexpr AccessPerm priv_ro() { return {0b101}; }
  static constexpr AccessPerm all_ro() { return {0b110}; }

  [[nodiscard]] constexpr bool is_reserved() const { return bits == 0b100; }

  [[nodiscard]] constexpr bool can_read(Mode m) const {
    switch (bits & 7u) {
      case 0b001:
      case 0b101: return m == Mode::Privileged;
      case 0b010:
      case 0b011:
      case 0b110:
      case 0b111: return true;
      default: return false;
    }
  }

  [[nodiscard]] constexpr bool can_write(Mode m) const {
    switch (bits & 7u) {
      case 0b001:
      case 0b010: return m == Mode::Privileged;
      case 0b011: return true;
      default: return false;
    }
  }
};

/// Attributes shared by section and small-page mappings.
struct MapRights {
  AccessPerm ap = AccessPerm::none();
  bool cacheable = true;
  bool xn = true;
  std::uint8_t domain = 0;  // sections only

  friend bool operator==(const MapRights&, const MapRights&) = default;

  [[nodiscard]] constexpr bool user_readable() const { return ap.can_read(Mode::NonPrivileged); }
  [[nodiscard]] constexpr bool user_writable() const { return ap.can_write(Mode::NonPrivileged); }
  [[nodiscard]] constexpr bool user_executable() const { return user_readable() && !xn; }
  [[nodiscard]] constexpr bool guest_accessible() const { return user_readable(); }

  static constexpr MapRights user_rw(bool cacheable = true) {
    return {AccessPerm::all_rw(), cacheable, true, 0};
  }
  static constexpr MapRights user_ro() { return {AccessPerm::all_ro(), true, true, 0}; }
  static constexpr MapRights user_rx() { return {AccessPerm::all_ro(), true, false, 0}; }
  static constexpr MapRights priv_only() { return {AccessPerm::priv_rw(), true, true, 0}; }
};

enum class L1Kind : std::uint8_t { Fault, PageTable, Section, Unpredictable };
enum class L2Kind : std::uint8_t { Fault, Small, Unpredictable };

struct L1Desc {
  L1Kind kind = L1Kind::Fault;
  std::uint32_t base = 0;  // section base or L2 table base
  MapRights rights{};

  [[nodiscard]] std::uint8_t domain() const { return rights.domain; }
};

struct L2Desc {
  L2Kind kind = L2Kind::Fault;
  std::uint32_t base = 0;
  MapRights rights{};
};

namespace desc_bits {
inline constexpr Word kB = 1u << 2;
inline constexpr Word kC = 1u << 3;
inline constexpr Word kSectionXn = 1u << 4;
inline constexpr Word kSectionAp2 = 1u << 15;
inline constexpr Word kSupersection = 1u << 18;
inline constexpr Word kSmallAp2 = 1u << 9;
}  // namespace desc_bits

[[nodiscard]] constexpr L1Desc decode_l1(Word w) {
  L1Desc d;
  switch (w & 3u) {
    case 0b00: return d;
    case 0b01:
      d.kind = L1Kind::PageTable;
      d.base = w & 0xFFFFFC00u;
      d.rights.domain = static_cast<std::uint8_t>((w >> 5) & 0xFu);
      return d;
    case 0b10: {
      d.kind = L1Kind::Section;
      d.base = w & 0xFFF00000u;
      const auto ap = static_cast<std::uint8_t>(((w >> 10) & 3u) |
                                                ((w & desc_bits::kSectionAp2) ? 4u : 0u));
      d.rights.ap = AccessPerm{ap};
      d.rights.cacheable = (w & desc_bits::kC) != 0;
      d.rights.xn = (w & desc_bits::kSectionXn) != 0;
      d.rights.domain = static_cast<std::uint8_t>((w >> 5) & 0xFu);
      if (d.rights.ap.is_reserved() || (w & desc_bits::kSupersection) != 0) {
        d.kind = L1Kind::Unpredictable;
      }
      return d;
    }
    default:
      d.kind = L1Kind::Unpredictable;
      return d;
  }
}

[[nodiscard]] constexpr L2Desc decode_l2(Word w) {
  L2Desc d;
  if ((w & 3u) == 0) return d;
  if ((w & 3u) == 1) {
    d.kind = L2Kind::Unpredictable;
    return d;
  }
  d.kind = L2Kind::Small;
  d.base = w & 0xFFFFF000u;
  const auto ap =
      static_cast<std::uint8_t>(((w >> 4) & 3u) | ((w & desc_bits::kSmallAp2) ? 4u : 0u));
  d.rights.ap = AccessPerm{ap};
  d.rights.cacheable = (w & desc_bits::kC) != 0;
  d.rights.xn = (w & 1u) != 0;
  if (d.rights.ap.is_reserved()) d.kind = L2Kind::Unpredictable;
  return d;
}

[[nodiscard]] constexpr Word encode_section(std::uint32_t base, const MapRights& r) {
  Word w = (base & 0xFFF00000u) | 0b10u;
  w |= static_cast<Word>(r.ap.bits & 3u) << 10;
  if (r.ap.bits & 4u) w |= desc_bits::kSectionAp2;
  w |= static_cast<Word>(r.domain & 0xFu) << 5;
  if (r.cacheable) w |= desc_bits::kC | desc_bits::kB;
  if (r.xn) w |= desc_bits::kSectionXn;
  return w;
}

[[nodiscard]] constexpr Word encode_page_table(std::uint32_t l2_base, std::uint8_t domain = 0) {
  return (l2_base & 0xFFFFFC00u) | (static_cast<Word>(domain & 0xFu) << 5) | 0b01u;
}

[[nodiscard]] constexpr Word encode_small(std::uint32_t base, const MapRights& r) {
  Word w = (base & 0xFFFFF000u) | 0b10u;
  w |= static_cast<Word>(r.ap.bits & 3u) << 4;
  if (r.ap.bits & 4u) w |= desc_bits::kSmallAp2;
  if (r.cacheable) w |= desc_bits::kC | desc_bits::kB;
  if (r.xn) w |= 1u;
  return w;
}

}  // namespace aliasim
