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

// A booted system: machine, hypervisor bookkeeping and monitor, plus the
// guest-visible step function.

#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "aliasim/hypervisor.hpp"
#include "aliasim/mmu.hpp"
#include "aliasim/monitor.hpp"

namespace aliasim {

/// Contiguous run of 1 MB sections.
struct Region {
  std::uint32_t first_mb = 0;
  std::uint32_t count_mb = 0;

  friend bool operator==(const Region&, const Region&) = default;
};

struct SystemConfig {
  CacheGeometry geometry{};
  std::uint32_t mem_mb = 16;
  Countermeasure countermeasure = Countermeasure::None;
  bool monitor = true;
  std::uint64_t seed = 0;
  std::vector<Region> guest_memory;     // empty: every section but the hypervisor's
  std::vector<Region> always_cacheable;  // empty: page-table and code sections
  std::optional<std::set<Signature>> golden;  // empty: signatures of the boot code
};

/// Physical and virtual layout established at boot, in 1 MB sections:
///
///   MB 0            hypervisor, privileged-only, outside guest memory
///   MB 1            page-table area: boot L1 at 0x100000, boot L2 block at 0x104000
///   MB 2            signed user code (read-only, executable)
///   MB 3 .. n-3     guest data, identity mapped read/write, cacheable
///   MB n-2, n-1     free pool, initially unmapped
///
/// Every data section also has an uncacheable read/write alias at
/// 0x80000000 + its base. The boot L2 block's four tables back virtual
/// 0x40000000 .. 0x403FFFFF and start out empty.
struct Layout {
  std::uint32_t mem_mb = 16;

  static constexpr std::uint32_t kHypMb = 0;
  static constexpr std::uint32_t kPtMb = 1;
  static constexpr std::uint32_t kCodeMb = 2;
  static constexpr std::uint32_t kFirstDataMb = 3;
  static constexpr std::uint32_t kL1Base = 0x00100000;
  static constexpr std::uint32_t kL2Block = 0x104;
  static constexpr std::uint32_t kL2LinkIdx = 0x400;
  static constexpr std::uint32_t kL2Va = kL2LinkIdx << kSectionShift;
  static constexpr std::uint32_t kAliasIdx = 0x800;
  static constexpr std::uint32_t kAliasVa = kAliasIdx << kSectionShift;

  [[nodiscard]] std::uint32_t last_data_mb() const { return mem_mb - 3; }
  [[nodiscard]] std::uint32_t pool_first_mb() const { return mem_mb - 2; }
  [[nodiscard]] std::uint32_t l1_block() const { return kL1Base >> kBlockShift; }
  [[nodiscard]] std::uint32_t pool_block(std::uint32_t i) const {
    return (pool_first_mb() << (kSectionShift - kBlockShift)) + i;
  }
  [[nodiscard]] std::uint32_t pool_blocks() const { return 2 * kBlocksPerSection; }
  [[nodiscard]] static std::uint32_t mb_base(std::uint32_t mb) { return mb << kSectionShift; }
  [[nodiscard]] static std::uint32_t uncached_alias(std::uint32_t pa) { return kAliasVa + pa; }
  /// Virtual address of entry `i` (0..1023) of the boot L2 block.
  [[nodiscard]] static std::uint32_t l2_slot_va(std::uint32_t i) {
    return kL2Va + (i << kBlockShift);
  }
  [[nodiscard]] bool is_data_mb(std::uint32_t mb) const {
    return mb >= kFirstDataMb && mb <= last_data_mb();
  }

  /// Contents of the boot L1 table.
  [[nodiscard]] std::vector<Word> boot_l1() const {
    std::vector<Word> l1(kL1Entries, 0);
    l1[kHypMb] = encode_section(mb_base(kHypMb), MapRights::priv_only());
    l1[kCodeMb] = encode_section(mb_base(kCodeMb), MapRights::user_rx());
    for (std::uint32_t mb = kFirstDataMb; mb <= last_data_mb(); ++mb) {
      l1[mb] = encode_section(mb_base(mb), MapRights::user_rw(true));
      l1[kAliasIdx + mb] = encode_section(mb_base(mb), MapRights::user_rw(false));
    }
    for (std::uint32_t k = 0; k < kL2TablesPerBlock; ++k) {
      l1[kL2LinkIdx + k] = encode_page_table((kL2Block << kBlockShift) + k * 1024);
    }
    return l1;
  }
};

enum class OpKind : std::uint8_t { Read, Write, Hypercall, CleanLine, InvalidateLine };

inline const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::Read: return "read";
    case OpKind::Write: return "write";
    case OpKind::Hypercall: return "hypercall";
    case OpKind::CleanLine: return "clean";
    case OpKind::InvalidateLine: return "invalidate";
  }
  return "?";
}

/// One guest instruction. Clean/invalidate by address are privileged cache
/// maintenance; hypercalls trap from user mode.
struct GuestOp {
  OpKind kind = OpKind::Read;
  VirtAddr va{};
  std::uint8_t reg = 0;
  Word value = 0;
  Hypercall call{};

  static GuestOp read(std::uint32_t va, std::uint8_t reg = 0) {
    return {OpKind::Read, VirtAddr{va}, reg};
  }
  static GuestOp write(std::uint32_t va, Word v) { return {OpKind::Write, VirtAddr{va}, 0, v}; }
  static GuestOp hypercall(const Hypercall& c) {
    GuestOp op;
    op.kind = OpKind::Hypercall;
    op.call = c;
    return op;
  }
  static GuestOp clean(std::uint32_t va) { return {OpKind::CleanLine, VirtAddr{va}}; }
  static GuestOp invalidate(std::uint32_t va) { return {OpKind::InvalidateLine, VirtAddr{va}}; }
};

enum class StepKind : std::uint8_t { Value, Done, Fault, Hypercall, Illegal };

struct StepResult {
  StepKind kind = StepKind::Done;
  Word value = 0;
  FaultKind fault = FaultKind::None;
  Verdict verdict{};
  HandlerTrace trace{};
};

class System {
 public:
  MachineState m;
  HypState h;
  GoldenImage gi;
  bool monitor_enabled = true;
  bool record_handler_reads = false;
  Layout layout{};

  System() = default;

  static System boot(const SystemConfig& cfg) {
    if (cfg.mem_mb < 6 || cfg.mem_mb > 4095) throw SimError("memory must be 6..4095 MB");
    System s;
    s.layout.mem_mb = cfg.mem_mb;
    s.monitor_enabled = cfg.monitor;
    s.m = MachineState(cfg.mem_mb << kSectionShift, cfg.geometry, cfg.seed);
    s.h = HypState(s.m.mem.num_blocks());
    s.h.countermeasure = cfg.countermeasure;
    const Layout& lay = s.layout;
    const std::uint32_t bps = kBlocksPerSection;

    auto mark = [&](std::vector<std::uint8_t>& bits, const std::vector<Region>& regions,
                    Region fallback) {
      if (regions.empty()) {
        for (std::uint32_t b = fallback.first_mb * bps;
             b < (fallback.first_mb + fallback.count_mb) * bps; ++b) {
          bits[b] = 1;
        }
        return;
      }
      for (const Region& r : regions) {
        if (r.first_mb <= Layout::kHypMb || r.first_mb + r.count_mb > cfg.mem_mb) {
          throw SimError("region overlaps hypervisor memory or exceeds memory");
        }
        for (std::uint32_t b = r.first_mb * bps; b < (r.first_mb + r.count_mb) * bps; ++b) {
          bits[b] = 1;
        }
      }
    };
    mark(s.h.g_m, cfg.guest_memory, Region{1, cfg.mem_mb - 1});
    mark(s.h.m_ac, cfg.always_cacheable, Region{Layout::kPtMb, 2});
    for (std::uint32_t b = Layout::kPtMb * bps; b < (Layout::kCodeMb + 1) * bps; ++b) {
      if (!s.h.g_m[b]) throw SimError("guest memory must contain the page-table and code sections");
    }
    for (std::uint32_t b = 0; b < s.h.num_blocks(); ++b) {
      if (s.h.m_ac[b] && !s.h.g_m[b]) throw SimError("always-cacheable region outside guest memory");
    }

    // Signed code: fixed pseudo-random contents, one signature per block.
    std::mt19937 code_rng(0xC0DEu);
    for (std::uint32_t b = Layout::kCodeMb * bps; b < (Layout::kCodeMb + 1) * bps; ++b) {
      Signature x = 0;
      for (std::uint32_t w = 0; w < kWordsPerBlock; ++w) {
        const Word v = code_rng();
        s.m.mem.write(block_base(Block{b}) + w * kWordBytes, v);
        x ^= v;
      }
      s.gi.signatures.insert(x);
    }
    if (cfg.golden) s.gi.signatures = *cfg.golden;

    const std::vector<Word> l1 = lay.boot_l1();
    RefDeltas deltas;
    for (std::uint32_t i = 0; i < kL1Entries; ++i) {
      s.m.mem.write(PhysAddr{Layout::kL1Base + i * kWordBytes}, l1[i]);
      add_l1_entry_refs(deltas, l1[i], +1);
    }
    if (!apply_ref_deltas(s.h, deltas)) throw SimError("boot: reference overflow");
    for (std::uint32_t b = lay.l1_block(); b < lay.l1_block() + kL1Blocks; ++b) {
      s.h.pgtype[b] = PageType::L1;
    }
    s.h.pgtype[Layout::kL2Block] = PageType::L2;

    s.m.coregs.ttbr0 = PhysAddr{Layout::kL1Base};
    s.m.coregs.dacr = 0x0001;
    s.m.coregs.mmu_enabled = true;
    s.m.mode = Mode::NonPrivileged;
    return s;
  }

  [[nodiscard]] MonitorHook monitor_hook() const {
    if (!monitor_enabled) return {};
    return make_monitor(gi);
  }

  StepResult step(const GuestOp& op) {
    StepResult r;
    switch (op.kind) {
      case OpKind::Read:
      case OpKind::Write: {
        const AccessReq req = op.kind == OpKind::Read ? AccessReq::Read : AccessReq::Write;
        const Translation t = translate(m, op.va, m.mode, req);
        if (!t.ok()) {
          r.kind = StepKind::Fault;
          r.fault = t.fault;
          return r;
        }
        if (op.kind == OpKind::Read) {
          r.value = t.cacheable ? m.cache.read(m.mem, op.va, t.pa) : m.mem.read(t.pa);
          m.regs[op.reg % kNumRegs] = r.value;
          r.kind = StepKind::Value;
        } else {
          if (t.cacheable) {
            m.cache.write(m.mem, op.va, t.pa, op.value);
          } else {
            m.mem.write(t.pa, op.value);
          }
          r.kind = StepKind::Done;
        }
        return r;
      }
      case OpKind::CleanLine:
      case OpKind::InvalidateLine: {
        if (m.mode != Mode::Privileged) {
          r.kind = StepKind::Illegal;
          return r;
        }
        const Translation t = translate(m, op.va, m.mode, AccessReq::Read);
        if (!t.ok()) {
          r.kind = StepKind::Fault;
          r.fault = t.fault;
          return r;
        }
        if (op.kind == OpKind::CleanLine) {
          m.cache.clean(m.mem, op.va, t.pa);
        } else {
          m.cache.invalidate(m.mem, op.va, t.pa);
        }
        r.kind = StepKind::Done;
        return r;
      }
      case OpKind::Hypercall: {
        if (m.mode != Mode::NonPrivileged) {
          r.kind = StepKind::Illegal;
          return r;
        }
        auto d = dmmu_dispatch(m, h, op.call, monitor_hook(), record_handler_reads);
        r.kind = StepKind::Hypercall;
        r.verdict = d.verdict;
        r.trace = std::move(d.trace);
        return r;
      }
    }
    return r;
  }

  /// Runs a single hypercall from user mode.
  Verdict call(const Hypercall& c) { return step(GuestOp::hypercall(c)).verdict; }
};

}  // namespace aliasim
