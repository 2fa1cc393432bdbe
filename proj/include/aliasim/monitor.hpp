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

// Runtime monitor enforcing executable-space protection (a block is never
// both user-writable and user-executable) and code signing against a
// golden image.

#include <map>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "aliasim/hypervisor.hpp"
#include "aliasim/mmu.hpp"

namespace aliasim {

using Signature = Word;

/// XOR of the words of a block.
[[nodiscard]] inline Signature sig(std::span<const Word> content) {
  Signature s = 0;
  for (Word w : content) s ^= w;
  return s;
}

struct GoldenImage {
  std::set<Signature> signatures;

  [[nodiscard]] bool contains(Signature s) const { return signatures.count(s) != 0; }
};

namespace detail {

struct Mapping {
  std::uint32_t entry = 0;
  std::uint32_t first_block = 0;
  std::uint32_t count = 0;
  bool wt = false;
  bool ex = false;
};

inline std::vector<Mapping> mappings_of(std::span<const Word> l1, std::span<const Word> l2) {
  std::vector<Mapping> out;
  for (std::uint32_t i = 0; i < l1.size(); ++i) {
    const L1Desc d = decode_l1(l1[i]);
    if (d.kind != L1Kind::Section) continue;
    out.push_back({i, d.base >> kBlockShift, kBlocksPerSection, d.rights.user_writable(),
                   d.rights.user_executable()});
  }
  for (std::uint32_t i = 0; i < l2.size(); ++i) {
    const L2Desc d = decode_l2(l2[i]);
    if (d.kind != L2Kind::Small) continue;
    out.push_back({i, d.base >> kBlockShift, 1, d.rights.user_writable(),
                   d.rights.user_executable()});
  }
  return out;
}

inline std::uint32_t table_blocks(const Hypercall& c) {
  switch (c.kind) {
    case HypercallKind::MapL1:
    case HypercallKind::UnmapL1:
    case HypercallKind::LinkL1:
    case HypercallKind::CreateL1:
    case HypercallKind::FreeL1:
    case HypercallKind::Switch: return kL1Blocks;
    default: return 1;
  }
}

}  // namespace detail

/// Per-request policy of the monitor.
[[nodiscard]] inline Verdict monitor_validate(const MonitorQuery& q, const GoldenImage& gi) {
  const Hypercall& c = q.call;
  const HypState& h = q.hyp;
  auto table_executable = [&] {
    for (std::uint32_t b = c.bl; b < c.bl + detail::table_blocks(c) && h.valid_block(b); ++b) {
      if (h.refs[b].ex != 0) return true;
    }
    return false;
  };
  std::map<std::uint32_t, bool> signed_cache;
  auto block_signed = [&](std::uint32_t b) {
    auto it = signed_cache.find(b);
    if (it != signed_cache.end()) return it->second;
    const auto content = q.reader.read_range(block_base(Block{b}), kWordsPerBlock);
    return signed_cache[b] = gi.contains(sig(content));
  };
  auto sound = [&](const detail::Mapping& mp) -> std::optional<RejectReason> {
    if (mp.wt && mp.ex) return RejectReason::WX;
    for (std::uint32_t b = mp.first_block; b < mp.first_block + mp.count; ++b) {
      if (mp.ex && h.refs[b].wt != 0) return RejectReason::WX;
      if (mp.wt && h.refs[b].ex != 0) return RejectReason::WX;
    }
    if (mp.ex) {
      for (std::uint32_t b = mp.first_block; b < mp.first_block + mp.count; ++b) {
        // Code the monitor must read to check signatures lives where it is
        // always cached.
        if (h.countermeasure == Countermeasure::Acpt && !h.always_cacheable(b)) {
          return RejectReason::OutsideAlwaysCacheable;
        }
        if (!block_signed(b)) return RejectReason::BadSignature;
      }
    }
    return std::nullopt;
  };

  switch (c.kind) {
    case HypercallKind::Switch:
    case HypercallKind::FreeL1:
    case HypercallKind::FreeL2: return Verdict::accept();

    case HypercallKind::UnmapL1:
    case HypercallKind::UnmapL2:
    case HypercallKind::LinkL1:
      if (table_executable()) return Verdict::reject(RejectReason::ExecutablePT);
      return Verdict::accept();

    case HypercallKind::MapL1:
    case HypercallKind::MapL2: {
      if (table_executable()) return Verdict::reject(RejectReason::ExecutablePT);
      for (const auto& mp : detail::mappings_of(q.l1_entries, q.l2_entries)) {
        if (auto r = sound(mp)) return Verdict::reject(*r, c.idx);
      }
      return Verdict::accept();
    }

    case HypercallKind::CreateL1:
    case HypercallKind::CreateL2: {
      const auto maps = detail::mappings_of(q.l1_entries, q.l2_entries);
      for (const auto& mp : maps) {
        if (auto r = sound(mp)) return Verdict::reject(*r, mp.entry);
      }
      // Two different entries of one table may not make the same block
      // writable and executable.
      std::map<std::uint32_t, std::pair<bool, bool>> seen;  // block -> (wt, ex)
      for (const auto& mp : maps) {
        for (std::uint32_t b = mp.first_block; b < mp.first_block + mp.count; ++b) {
          auto& [wt, ex] = seen[b];
          if ((mp.wt && ex) || (mp.ex && wt)) {
            return Verdict::reject(RejectReason::ConflictingAliases, mp.entry);
          }
          wt = wt || mp.wt;
          ex = ex || mp.ex;
        }
      }
      return Verdict::accept();
    }
  }
  return Verdict::accept();
}

[[nodiscard]] inline MonitorHook make_monitor(const GoldenImage& gi) {
  return [&gi](const MonitorQuery& q) { return monitor_validate(q, gi); };
}

/// Blocks executable in user mode, each with its memory-view content.
[[nodiscard]] inline std::vector<std::pair<std::uint32_t, PhysMemory::BlockData>> working_set(
    const MachineState& m) {
  std::vector<std::pair<std::uint32_t, PhysMemory::BlockData>> out;
  const AccessMap map(m);
  for (std::uint32_t b = 0; b < map.num_blocks(); ++b) {
    if (!map.allows(Block{b}, Mode::NonPrivileged, AccessReq::Execute)) continue;
    out.emplace_back(b, memory_view_block(m, Block{b}));
  }
  return out;
}

/// Every executable block carries an approved signature.
[[nodiscard]] inline bool integrity(const GoldenImage& gi, const MachineState& m) {
  for (const auto& [b, content] : working_set(m)) {
    if (!gi.contains(sig(content))) return false;
  }
  return true;
}

}  // namespace aliasim
