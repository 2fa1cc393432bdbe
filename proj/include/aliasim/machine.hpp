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

#include <algorithm>
#include <array>
#include <span>

#include "aliasim/cache.hpp"
#include "aliasim/phys_memory.hpp"
#include "aliasim/types.hpp"

namespace aliasim {

inline constexpr std::size_t kNumRegs = 16;

struct CoprocConfig {
  PhysAddr ttbr0{};
  std::uint16_t dacr = 0x0001;  // one enable bit per domain; guest runs in domain 0
  bool mmu_enabled = false;

  friend bool operator==(const CoprocConfig&, const CoprocConfig&) = default;

  [[nodiscard]] bool domain_enabled(unsigned d) const { return ((dacr >> d) & 1u) != 0; }
};

struct MachineState {
  std::array<Word, kNumRegs> regs{};
  Mode mode = Mode::NonPrivileged;
  CoprocConfig coregs{};
  PhysMemory mem;
  Cache cache;

  MachineState() = default;
  MachineState(std::uint32_t mem_bytes, const CacheGeometry& geom, std::uint64_t seed = 0)
      : mem(mem_bytes), cache(geom, seed) {}

  [[nodiscard]] bool in_range(PhysAddr pa) const { return mem.in_range(pa); }
};

/// Value the core reads: the cached word on a hit, memory otherwise.
[[nodiscard]] inline Word core_view(const MachineState& s, PhysAddr pa) {
  const Word m = s.mem.read(pa);
  if (auto hit = s.cache.lookup(pa)) return hit->value();
  return m;
}

/// Value memory would hold once the line is evicted.
[[nodiscard]] inline Word memory_view(const MachineState& s, PhysAddr pa) {
  const Word m = s.mem.read(pa);
  if (auto hit = s.cache.lookup(pa); hit && hit->line->dirty) return hit->value();
  return m;
}

/// Memory view of a whole block: memory with dirty lines laid over it.
[[nodiscard]] inline PhysMemory::BlockData memory_view_block(const MachineState& s, Block b) {
  PhysMemory::BlockData out = s.mem.block_data(b);
  const std::uint32_t line_words = s.cache.geometry().line_words;
  for (std::uint32_t w = 0; w < kWordsPerBlock; w += line_words) {
    auto hit = s.cache.lookup(block_base(b) + w * kWordBytes);
    if (!hit || !hit->line->dirty) continue;
    std::copy(hit->line->data.begin(), hit->line->data.end(), out.begin() + w);
  }
  return out;
}

/// Every hit that disagrees with memory is dirty.
[[nodiscard]] inline bool coherent(const MachineState& s, PhysAddr pa) {
  const Word m = s.mem.read(pa);
  auto hit = s.cache.lookup(pa);
  return !hit || hit->line->dirty || hit->value() == m;
}

[[nodiscard]] inline bool coherent(const MachineState& s, std::span<const PhysAddr> addrs) {
  for (PhysAddr pa : addrs) {
    if (!coherent(s, pa)) return false;
  }
  return true;
}

/// Coherency of every address currently held in the cache.
[[nodiscard]] inline bool coherent_all(const MachineState& s) {
  const auto& g = s.cache.geometry();
  for (std::uint32_t i = 0; i < g.num_sets; ++i) {
    for (const auto& [tag, line] : s.cache.set(i).slice) {
      if (line.dirty) continue;
      const PhysAddr base = g.line_base(i, tag);
      for (std::uint32_t w = 0; w < g.line_words; ++w) {
        if (line.data[w] != s.mem.read(base + w * kWordBytes)) return false;
      }
    }
  }
  return true;
}

/// Per-address cache/memory footprint used for state diffs and derivability.
struct AddrState {
  Word mem = 0;
  bool hit = false;
  bool dirty = false;
  Word cached = 0;

  friend bool operator==(const AddrState&, const AddrState&) = default;
};

[[nodiscard]] inline AddrState addr_state(const MachineState& s, PhysAddr pa) {
  AddrState a;
  a.mem = s.mem.read(pa);
  if (auto hit = s.cache.lookup(pa)) {
    a.hit = true;
    a.dirty = hit->line->dirty;
    a.cached = hit->value();
  }
  return a;
}

}  // namespace aliasim
