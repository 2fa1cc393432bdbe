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
#include <vector>

#include "aliasim/machine.hpp"

namespace aliasim {

/// Physical addresses whose memory word or cache footprint (hit, dirty,
/// cached word) differ between two states of the same shape. Blocks and
/// cache sets still shared between the two states are skipped without
/// being inspected.
[[nodiscard]] inline std::vector<PhysAddr> changed_addresses(const MachineState& a,
                                                             const MachineState& b) {
  if (a.mem.num_blocks() != b.mem.num_blocks() ||
      !(a.cache.geometry() == b.cache.geometry())) {
    throw SimError("changed_addresses: states have different shapes");
  }
  std::vector<PhysAddr> out;
  for (std::uint32_t bl = 0; bl < a.mem.num_blocks(); ++bl) {
    if (a.mem.shares_block(b.mem, Block{bl})) continue;
    const auto& da = a.mem.block_data(Block{bl});
    const auto& db = b.mem.block_data(Block{bl});
    for (std::uint32_t w = 0; w < kWordsPerBlock; ++w) {
      if (da[w] != db[w]) out.push_back(block_base(Block{bl}) + w * kWordBytes);
    }
  }
  const auto& g = a.cache.geometry();
  std::vector<PhysAddr> lines;
  for (std::uint32_t i = 0; i < g.num_sets; ++i) {
    if (a.cache.shares_set(b.cache, i)) continue;
    for (const auto* s : {&a.cache.set(i), &b.cache.set(i)}) {
      for (const auto& entry : s->slice) lines.push_back(g.line_base(i, entry.first));
    }
  }
  std::sort(lines.begin(), lines.end());
  lines.erase(std::unique(lines.begin(), lines.end()), lines.end());
  for (PhysAddr base : lines) {
    for (std::uint32_t w = 0; w < g.line_words; ++w) {
      const PhysAddr pa = base + w * kWordBytes;
      if (!a.in_range(pa)) continue;
      if (!(addr_state(a, pa) == addr_state(b, pa))) out.push_back(pa);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace aliasim
