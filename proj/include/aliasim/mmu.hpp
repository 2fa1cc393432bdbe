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

#include <optional>
#include <random>
#include <vector>

#include "aliasim/descriptors.hpp"
#include "aliasim/diff.hpp"
#include "aliasim/machine.hpp"

namespace aliasim {

enum class FaultKind : std::uint8_t { None, Unmapped, Domain, Permission, Unpredictable };

inline const char* to_string(FaultKind f) {
  switch (f) {
    case FaultKind::None: return "none";
    case FaultKind::Unmapped: return "unmapped";
    case FaultKind::Domain: return "domain";
    case FaultKind::Permission: return "permission";
    case FaultKind::Unpredictable: return "unpredictable";
  }
  return "?";
}

struct Translation {
  FaultKind fault = FaultKind::None;
  PhysAddr pa{};
  bool cacheable = false;

  [[nodiscard]] bool ok() const { return fault == FaultKind::None; }

  friend bool operator==(const Translation& a, const Translation& b) {
    if (a.ok() != b.ok()) return false;
    return !a.ok() || (a.pa == b.pa && a.cacheable == b.cacheable);
  }
};

[[nodiscard]] inline bool rights_allow(const MapRights& r, Mode m, AccessReq req) {
  switch (req) {
    case AccessReq::Read: return r.ap.can_read(m);
    case AccessReq::Write: return r.ap.can_write(m);
    case AccessReq::Execute: return r.ap.can_read(m) && !r.xn;
  }
  return false;
}

namespace detail {

// Descriptor fetches see the core view and never allocate.
inline std::optional<Word> fetch_desc(const MachineState& s, std::uint32_t pa) {
  if (!s.in_range(PhysAddr{pa})) return std::nullopt;
  return core_view(s, PhysAddr{pa});
}

}  // namespace detail

/// Two-level walk of the active table for `va`.
[[nodiscard]] inline Translation translate(const MachineState& s, VirtAddr va, Mode m,
                                           AccessReq req) {
  Translation t;
  if (!s.coregs.mmu_enabled) {
    t.pa = PhysAddr{va.value};
    if (!s.in_range(t.pa)) t.fault = FaultKind::Unmapped;
    return t;
  }
  const std::uint32_t l1_idx = va.value >> kSectionShift;
  const auto w1 = detail::fetch_desc(s, s.coregs.ttbr0.value + l1_idx * kWordBytes);
  if (!w1) return {FaultKind::Unmapped, {}, false};
  const L1Desc d1 = decode_l1(*w1);
  MapRights rights;
  std::uint32_t pa = 0;
  switch (d1.kind) {
    case L1Kind::Fault: return {FaultKind::Unmapped, {}, false};
    case L1Kind::Unpredictable: return {FaultKind::Unpredictable, {}, false};
    case L1Kind::Section:
      rights = d1.rights;
      pa = d1.base | (va.value & ((1u << kSectionShift) - 1));
      break;
    case L1Kind::PageTable: {
      const std::uint32_t l2_idx = (va.value >> kBlockShift) & (kL2Entries - 1);
      const auto w2 = detail::fetch_desc(s, d1.base + l2_idx * kWordBytes);
      if (!w2) return {FaultKind::Unmapped, {}, false};
      const L2Desc d2 = decode_l2(*w2);
      if (d2.kind == L2Kind::Fault) return {FaultKind::Unmapped, {}, false};
      if (d2.kind == L2Kind::Unpredictable) return {FaultKind::Unpredictable, {}, false};
      rights = d2.rights;
      rights.domain = d1.domain();
      pa = d2.base | (va.value & (kBlockBytes - 1));
      break;
    }
  }
  if (!s.coregs.domain_enabled(rights.domain)) return {FaultKind::Domain, {}, false};
  if (!rights_allow(rights, m, req)) return {FaultKind::Permission, {}, false};
  if (!s.in_range(PhysAddr{pa & ~(kWordBytes - 1)})) return {FaultKind::Unmapped, {}, false};
  t.pa = PhysAddr{pa};
  t.cacheable = rights.cacheable;
  return t;
}

/// Per-block summary of every right granted by the active page table, plus
/// the physical memory the walk itself reads.
class AccessMap {
 public:
  enum Bit : std::uint16_t {
    kURd = 1u << 0,
    kUWt = 1u << 1,
    kUEx = 1u << 2,
    kPRd = 1u << 3,
    kPWt = 1u << 4,
    kPEx = 1u << 5,
    kUWtUncached = 1u << 6,
    kAnyUncached = 1u << 7,
    kAnyCached = 1u << 8,
  };

  AccessMap() = default;
  explicit AccessMap(const MachineState& s) { build(s); }

  [[nodiscard]] bool allows(Block b, Mode m, AccessReq req) const {
    return (at(b) & bit_for(m, req)) != 0;
  }
  [[nodiscard]] bool has(Block b, std::uint16_t mask) const { return (at(b) & mask) != 0; }
  [[nodiscard]] std::uint16_t bits(Block b) const { return at(b); }
  [[nodiscard]] std::uint32_t num_blocks() const {
    return static_cast<std::uint32_t>(bits_.size());
  }

  /// True when the walk reads the word at `pa` (the L1 table or a linked L2).
  [[nodiscard]] bool in_footprint(PhysAddr pa) const {
    const std::uint32_t kb = pa.value >> 10;
    return kb < footprint_kb_.size() && footprint_kb_[kb];
  }

  static std::uint16_t bit_for(Mode m, AccessReq req) {
    const bool u = m == Mode::NonPrivileged;
    switch (req) {
      case AccessReq::Read: return u ? kURd : kPRd;
      case AccessReq::Write: return u ? kUWt : kPWt;
      case AccessReq::Execute: return u ? kUEx : kPEx;
    }
    return 0;
  }

  static std::uint16_t rights_bits(const MapRights& r) {
    std::uint16_t out = 0;
    for (Mode m : {Mode::NonPrivileged, Mode::Privileged}) {
      for (AccessReq q : {AccessReq::Read, AccessReq::Write, AccessReq::Execute}) {
        if (rights_allow(r, m, q)) out |= bit_for(m, q);
      }
    }
    if (out == 0) return 0;
    out |= r.cacheable ? kAnyCached : kAnyUncached;
    if (!r.cacheable && (out & kUWt)) out |= kUWtUncached;
    return out;
  }

 private:
  [[nodiscard]] std::uint16_t at(Block b) const {
    return b.index < bits_.size() ? bits_[b.index] : 0;
  }

  void mark_kb(std::uint32_t pa, std::uint32_t bytes) {
    for (std::uint32_t kb = pa >> 10; kb < ((pa + bytes) >> 10) && kb < footprint_kb_.size();
         ++kb) {
      footprint_kb_[kb] = true;
    }
  }

  void grant(std::uint32_t first_block, std::uint32_t count, std::uint16_t mask) {
    for (std::uint32_t b = first_block; b < first_block + count && b < bits_.size(); ++b) {
      bits_[b] |= mask;
    }
  }

  void build(const MachineState& s) {
    bits_.assign(s.mem.num_blocks(), 0);
    footprint_kb_.assign(s.mem.size_bytes() >> 10, false);
    if (!s.coregs.mmu_enabled) {
      MapRights flat{AccessPerm::all_rw(), false, false, 0};
      grant(0, s.mem.num_blocks(), rights_bits(flat));
      return;
    }
    const std::uint32_t l1 = s.coregs.ttbr0.value;
    mark_kb(l1, kL1Entries * kWordBytes);
    for (std::uint32_t i = 0; i < kL1Entries; ++i) {
      const auto w1 = detail::fetch_desc(s, l1 + i * kWordBytes);
      if (!w1) continue;
      const L1Desc d1 = decode_l1(*w1);
      if (d1.kind == L1Kind::Section) {
        if (!s.coregs.domain_enabled(d1.domain())) continue;
        grant(d1.base >> kBlockShift, kBlocksPerSection, rights_bits(d1.rights));
      } else if (d1.kind == L1Kind::PageTable) {
        mark_kb(d1.base, kL2Entries * kWordBytes);
        if (!s.coregs.domain_enabled(d1.domain())) continue;
        for (std::uint32_t j = 0; j < kL2Entries; ++j) {
          const auto w2 = detail::fetch_desc(s, d1.base + j * kWordBytes);
          if (!w2) continue;
          const L2Desc d2 = decode_l2(*w2);
          if (d2.kind != L2Kind::Small) continue;
          grant(d2.base >> kBlockShift, 1, rights_bits(d2.rights));
        }
      }
    }
  }

  std::vector<std::uint16_t> bits_;
  std::vector<bool> footprint_kb_;
};

/// Whether some virtual address grants `acc` to `pa` in mode `m`.
[[nodiscard]] inline bool mon(const MachineState& s, PhysAddr pa, Mode m, AccessReq acc) {
  return AccessMap(s).allows(pa.block(), m, acc);
}

/// Memories (as seen by the core) differ only at addresses writable in `m`
/// under the page table of `s`.
[[nodiscard]] inline bool write_derivable(const MachineState& s, const MachineState& s2, Mode m,
                                          const AccessMap* pre_map = nullptr) {
  std::optional<AccessMap> local;
  if (pre_map == nullptr) pre_map = &local.emplace(s);
  for (PhysAddr pa : changed_addresses(s, s2)) {
    if (core_view(s, pa) == core_view(s2, pa)) continue;
    if (!pre_map->allows(pa.block(), m, AccessReq::Write)) return false;
  }
  return true;
}

namespace detail {

inline bool same_translation_all_rights(const MachineState& a, const MachineState& b,
                                        VirtAddr va) {
  for (Mode m : {Mode::NonPrivileged, Mode::Privileged}) {
    for (AccessReq q : {AccessReq::Read, AccessReq::Write, AccessReq::Execute}) {
      if (!(translate(a, va, m, q) == translate(b, va, m, q))) return false;
    }
  }
  return true;
}

}  // namespace detail

/// Same translation and permissions for every address. Sections are linear,
/// so one probe per section suffices; page-table entries are checked per
/// page. `samples` extra random addresses are compared on top.
[[nodiscard]] inline bool mmu_equivalent(const MachineState& a, const MachineState& b,
                                         std::uint32_t samples = 0, std::uint64_t seed = 0) {
  if (a.coregs.mmu_enabled != b.coregs.mmu_enabled) return false;
  if (a.coregs == b.coregs && a.coregs.mmu_enabled) {
    // Identical walk inputs give identical walks.
    bool same = true;
    const std::uint32_t l1 = a.coregs.ttbr0.value;
    for (std::uint32_t i = 0; i < kL1Entries && same; ++i) {
      const auto wa = detail::fetch_desc(a, l1 + i * kWordBytes);
      const auto wb = detail::fetch_desc(b, l1 + i * kWordBytes);
      if (wa != wb) {
        same = false;
        break;
      }
      if (!wa) continue;
      const L1Desc d = decode_l1(*wa);
      if (d.kind != L1Kind::PageTable) continue;
      for (std::uint32_t j = 0; j < kL2Entries; ++j) {
        if (detail::fetch_desc(a, d.base + j * kWordBytes) !=
            detail::fetch_desc(b, d.base + j * kWordBytes)) {
          same = false;
          break;
        }
      }
    }
    if (same) return true;
  }
  for (std::uint32_t i = 0; i < kL1Entries; ++i) {
    const VirtAddr va{i << kSectionShift};
    auto kind_of = [&](const MachineState& s) {
      if (!s.coregs.mmu_enabled) return L1Kind::Section;
      const auto w = detail::fetch_desc(s, s.coregs.ttbr0.value + i * kWordBytes);
      return w ? decode_l1(*w).kind : L1Kind::Fault;
    };
    if (kind_of(a) == L1Kind::PageTable || kind_of(b) == L1Kind::PageTable) {
      for (std::uint32_t p = 0; p < kL2Entries; ++p) {
        if (!detail::same_translation_all_rights(a, b, VirtAddr{va.value | (p << kBlockShift)})) {
          return false;
        }
      }
    } else if (!detail::same_translation_all_rights(a, b, va)) {
      return false;
    }
  }
  std::mt19937_64 rng(seed);
  for (std::uint32_t k = 0; k < samples; ++k) {
    const VirtAddr va{static_cast<std::uint32_t>(rng()) & ~(kWordBytes - 1)};
    if (!detail::same_translation_all_rights(a, b, va)) return false;
  }
  return true;
}

/// Randomized MMU-safety: applies `trials` random multisets of writes to
/// user-writable addresses and checks the translation never changes. Half
/// of the writes target writable words the walk itself reads.
[[nodiscard]] inline bool mmu_safe_check(const MachineState& s, std::uint32_t trials,
                                         std::mt19937_64& rng) {
  const AccessMap map(s);
  std::vector<std::uint32_t> writable;
  std::vector<std::uint32_t> hot;
  for (std::uint32_t b = 0; b < map.num_blocks(); ++b) {
    if (!map.allows(Block{b}, Mode::NonPrivileged, AccessReq::Write)) continue;
    writable.push_back(b);
    for (std::uint32_t kb = 0; kb < kBlockBytes >> 10; ++kb) {
      const PhysAddr pa = block_base(Block{b}) + (kb << 10);
      if (map.in_footprint(pa)) hot.push_back(pa.value);
    }
  }
  if (writable.empty()) return true;
  for (std::uint32_t t = 0; t < trials; ++t) {
    MachineState s2 = s;
    const std::uint32_t n = 1 + static_cast<std::uint32_t>(rng() % 8);
    for (std::uint32_t k = 0; k < n; ++k) {
      std::uint32_t pa = 0;
      if (!hot.empty() && (rng() & 1u)) {
        pa = hot[rng() % hot.size()] + static_cast<std::uint32_t>(rng() % 256) * kWordBytes;
      } else {
        pa = (writable[rng() % writable.size()] << kBlockShift) +
             static_cast<std::uint32_t>(rng() % kWordsPerBlock) * kWordBytes;
      }
      s2.cache.write(s2.mem, VirtAddr{pa}, PhysAddr{pa}, static_cast<Word>(rng()));
    }
    if (!mmu_equivalent(s, s2)) return false;
  }
  return true;
}

}  // namespace aliasim
