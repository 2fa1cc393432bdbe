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

// Process creation through the paging API: map four free blocks writable,
// fill them with a page table, unmap, create and switch.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "aliasim/system.hpp"

namespace aliasim {

struct SpawnStep {
  std::string label;
  GuestOp op;
  StepResult result;
  std::array<RefCounters, kL1Blocks> rc{};  // counters of the new table's blocks afterwards
};

struct SpawnTrace {
  std::uint32_t table_block = 0;
  std::vector<SpawnStep> steps;
  bool accepted = false;  // every hypercall accepted
  bool switched = false;  // the new table is active
  std::uint64_t content_writes = 0;
};

/// Spawns a process whose L1 is a copy of the boot table, placed in the
/// first four pool blocks. Table writes are plain guest stores and are
/// summarized rather than recorded one by one.
[[nodiscard]] inline SpawnTrace run_spawn_demo(System& s) {
  SpawnTrace t;
  t.table_block = s.layout.pool_block(0);
  const std::uint32_t p = t.table_block;
  auto counters = [&] {
    std::array<RefCounters, kL1Blocks> rc{};
    for (std::uint32_t k = 0; k < kL1Blocks; ++k) rc[k] = s.h.refs[p + k];
    return rc;
  };
  t.accepted = true;
  auto call = [&](const std::string& label, const Hypercall& c) {
    const GuestOp op = GuestOp::hypercall(c);
    SpawnStep st{label, op, s.step(op), {}};
    st.rc = counters();
    t.accepted = t.accepted && st.result.verdict.accepted;
    t.steps.push_back(std::move(st));
  };
  for (std::uint32_t k = 0; k < kL1Blocks; ++k) {
    call("map", Hypercall::map_l2(Layout::kL2Block, k, (p + k) << kBlockShift,
                                  MapRights::user_rw(true)));
  }
  const std::vector<Word> image = s.layout.boot_l1();
  for (std::uint32_t i = 0; i < kL1Entries; ++i) {
    if (image[i] == 0) continue;
    s.step(GuestOp::write(Layout::l2_slot_va(0) + i * kWordBytes, image[i]));
    ++t.content_writes;
  }
  for (std::uint32_t k = 0; k < kL1Blocks; ++k) {
    call("unmap", Hypercall::unmap_l2(Layout::kL2Block, k));
  }
  call("create", Hypercall::create_l1(p));
  call("switch", Hypercall::switch_to(p));
  t.switched = s.m.coregs.ttbr0.value == (p << kBlockShift);
  return t;
}

}  // namespace aliasim
