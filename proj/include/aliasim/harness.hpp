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
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aliasim/cache.hpp"
#include "aliasim/diff.hpp"
#include "aliasim/mmu.hpp"
#include "aliasim/system.hpp"

namespace aliasim {

/// One structured harness verdict.
struct CheckResult {
  std::string id;
  std::uint64_t seed = 0;
  bool applicable = true;
  bool pass = true;
  std::uint64_t steps = 0;
  std::uint64_t events = 0;  // check-specific count, e.g. accepted hypercalls
  std::string witness;

  void fail(std::string w) {
    if (!pass) return;
    pass = false;
    witness = std::move(w);
  }
};

inline std::string hex32(std::uint32_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s = "0x00000000";
  for (int i = 0; i < 8; ++i) s[9 - i] = digits[(v >> (4 * i)) & 0xf];
  return s;
}

// ---------------------------------------------------------------------------
// Derivability

enum class DerivClause : std::uint8_t { Violated, Empty, Read, Write };

inline const char* to_string(DerivClause c) {
  switch (c) {
    case DerivClause::Violated: return "violated";
    case DerivClause::Empty: return "D0";
    case DerivClause::Read: return "Drd";
    case DerivClause::Write: return "Dwt";
  }
  return "?";
}

struct AddrVerdict {
  PhysAddr pa{};
  DerivClause clause = DerivClause::Violated;
};

struct DerivabilityWitness {
  bool coregs_equal = true;
  std::vector<AddrVerdict> addresses;  // one per changed address
  std::optional<PhysAddr> first_violation;

  [[nodiscard]] bool ok() const { return coregs_equal && !first_violation; }

  [[nodiscard]] std::string describe() const {
    if (!coregs_equal) return "coprocessor registers changed";
    if (first_violation) return "no clause holds at " + hex32(first_violation->value);
    return "ok";
  }
};

namespace detail {

inline bool way_changed(const AddrState& a, const AddrState& b) {
  return a.hit != b.hit || a.dirty != b.dirty || a.cached != b.cached;
}

inline bool dirty_of(const AddrState& a) { return a.hit && a.dirty; }

inline bool clause_empty(const AddrState& a, const AddrState& b) {
  const bool mem_ok = a.mem == b.mem || (dirty_of(a) && b.mem == a.cached);
  const bool way_ok =
      !way_changed(a, b) || (!b.hit && (!dirty_of(a) || b.mem == a.cached));
  return mem_ok && way_ok;
}

inline bool clause_read(const AccessMap& pre, PhysAddr pa, const AddrState& a,
                        const AddrState& b) {
  // Implication binds tighter than conjunction, as in the other two clauses:
  // memory must be unchanged, and a changed line must be a fresh fill.
  if (!pre.allows(pa.block(), Mode::NonPrivileged, AccessReq::Read)) return false;
  if (a.mem != b.mem) return false;
  return !way_changed(a, b) || (b.hit && b.cached == a.mem && !a.hit);
}

inline bool clause_write(const AccessMap& pre, PhysAddr pa, const AddrState& a,
                         const AddrState& b) {
  if (!pre.allows(pa.block(), Mode::NonPrivileged, AccessReq::Write)) return false;
  if (way_changed(a, b) && !dirty_of(b)) return false;
  if (a.mem != b.mem && !dirty_of(b)) return pre.has(pa.block(), AccessMap::kUWtUncached);
  return true;
}

}  // namespace detail

/// Whether `post` is derivable from `pre` by one non-privileged step: equal
/// coprocessor registers, and every changed address satisfies one of the
/// three clauses.
[[nodiscard]] inline DerivabilityWitness check_derivability(const MachineState& pre,
                                                            const MachineState& post,
                                                            const AccessMap* pre_map = nullptr) {
  std::optional<AccessMap> local;
  if (pre_map == nullptr) pre_map = &local.emplace(pre);
  DerivabilityWitness w;
  w.coregs_equal = pre.coregs == post.coregs;
  for (PhysAddr pa : changed_addresses(pre, post)) {
    const AddrState a = addr_state(pre, pa);
    const AddrState b = addr_state(post, pa);
    DerivClause c = DerivClause::Violated;
    if (detail::clause_empty(a, b)) {
      c = DerivClause::Empty;
    } else if (detail::clause_read(*pre_map, pa, a, b)) {
      c = DerivClause::Read;
    } else if (detail::clause_write(*pre_map, pa, a, b)) {
      c = DerivClause::Write;
    }
    if (c == DerivClause::Violated && !w.first_violation) w.first_violation = pa;
    w.addresses.push_back({pa, c});
  }
  return w;
}

// ---------------------------------------------------------------------------
// Reference-counter oracle and the hypervisor invariant

/// Recounts every reference from scratch. Descriptors are position
/// independent, so each non-Data block is scanned word by word according to
/// its own type.
[[nodiscard]] inline std::vector<RefCounters> recount_refs(const MachineState& m,
                                                           const HypState& h) {
  std::vector<RefCounters> rc(h.num_blocks());
  auto bump = [&](std::uint32_t b, std::uint32_t RefCounters::*field) {
    if (b < rc.size()) ++(rc[b].*field);
  };
  for (std::uint32_t b = 0; b < h.num_blocks(); ++b) {
    if (h.pgtype[b] == PageType::Data) continue;
    const auto content = memory_view_block(m, Block{b});
    for (const Word w : content) {
      if (h.pgtype[b] == PageType::L1) {
        const L1Desc d = decode_l1(w);
        if (d.kind == L1Kind::PageTable) {
          bump(d.base >> kBlockShift, &RefCounters::ptlink);
        } else if (d.kind == L1Kind::Section) {
          for (std::uint32_t s = 0; s < kBlocksPerSection; ++s) {
            if (d.rights.user_writable()) bump((d.base >> kBlockShift) + s, &RefCounters::wt);
            if (d.rights.user_executable()) bump((d.base >> kBlockShift) + s, &RefCounters::ex);
          }
        }
      } else {
        const L2Desc d = decode_l2(w);
        if (d.kind != L2Kind::Small) continue;
        if (d.rights.user_writable()) bump(d.base >> kBlockShift, &RefCounters::wt);
        if (d.rights.user_executable()) bump(d.base >> kBlockShift, &RefCounters::ex);
      }
    }
  }
  return rc;
}

/// First mismatch between stored and recounted counters, if any.
[[nodiscard]] inline std::optional<std::string> refcount_mismatch(const System& s) {
  const auto rc = recount_refs(s.m, s.h);
  for (std::uint32_t b = 0; b < rc.size(); ++b) {
    if (rc[b] == s.h.refs[b]) continue;
    const auto& st = s.h.refs[b];
    return "block " + hex32(b) + ": stored wt/ex/ptlink " + std::to_string(st.wt) + "/" +
           std::to_string(st.ex) + "/" + std::to_string(st.ptlink) + ", recount " +
           std::to_string(rc[b].wt) + "/" + std::to_string(rc[b].ex) + "/" +
           std::to_string(rc[b].ptlink);
  }
  return std::nullopt;
}

namespace detail {

inline std::vector<Word> memory_view_words(const MachineState& m, std::uint32_t first_block,
                                           std::uint32_t blocks) {
  std::vector<Word> out;
  out.reserve(blocks * kWordsPerBlock);
  for (std::uint32_t b = first_block; b < first_block + blocks; ++b) {
    const auto data = memory_view_block(m, Block{b});
    out.insert(out.end(), data.begin(), data.end());
  }
  return out;
}

}  // namespace detail

/// Checks the hypervisor invariant: typing, table soundness, reference
/// counts, the countermeasure's coherency and placement conditions, and the
/// monitor's W^X and integrity conditions. Returns the first violation.
[[nodiscard]] inline std::optional<std::string> invariant_violation(const System& s) {
  const HypState& h = s.h;
  const MachineState& m = s.m;
  if (!m.coregs.mmu_enabled) return "MMU disabled";
  const std::uint32_t root = m.coregs.ttbr0.value >> kBlockShift;
  if ((m.coregs.ttbr0.value & (kL1Entries * kWordBytes - 1)) != 0 || !h.valid_block(root) ||
      h.pgtype[root] != PageType::L1) {
    return "active table is not a typed L1";
  }
  for (std::uint32_t b = 0; b < h.num_blocks(); ++b) {
    if (h.pgtype[b] == PageType::Data) continue;
    if (!h.in_guest(b)) return "table block " + hex32(b) + " outside guest memory";
    if (h.countermeasure == Countermeasure::Acpt && !h.always_cacheable(b)) {
      return "table block " + hex32(b) + " outside the always-cacheable region";
    }
    if (h.pgtype[b] == PageType::L1) {
      const std::uint32_t base = b & ~(kL1Blocks - 1);
      for (std::uint32_t k = base; k < base + kL1Blocks; ++k) {
        if (!h.valid_block(k) || h.pgtype[k] != PageType::L1) {
          return "L1 block " + hex32(b) + " not part of an aligned group";
        }
      }
      if (b == base) {
        const auto words = detail::memory_view_words(m, base, kL1Blocks);
        if (Verdict v = validate_l1(h, words); !v.accepted) {
          return "L1 at " + hex32(base) + " entry " + std::to_string(v.entry) + ": " +
                 to_string(v.reason);
        }
      }
    } else {
      const auto words = detail::memory_view_words(m, b, 1);
      if (Verdict v = validate_l2(h, words); !v.accepted) {
        return "L2 at " + hex32(b) + " entry " + std::to_string(v.entry) + ": " +
               to_string(v.reason);
      }
    }
    if (h.countermeasure != Countermeasure::None) {
      for (std::uint32_t k = 0; k < kWordsPerBlock; ++k) {
        if (!coherent(m, block_base(Block{b}) + k * kWordBytes)) {
          return "table block " + hex32(b) + " incoherent";
        }
      }
    }
  }
  if (auto rc = refcount_mismatch(s)) return rc;
  if (s.monitor_enabled) {
    for (std::uint32_t b = 0; b < h.num_blocks(); ++b) {
      if (h.refs[b].wt != 0 && h.refs[b].ex != 0) {
        return "block " + hex32(b) + " writable and executable";
      }
    }
    if (!integrity(s.gi, m)) return "executable block with unknown signature";
  }
  return std::nullopt;
}

[[nodiscard]] inline bool invariant_holds(const System& s) { return !invariant_violation(s); }

// ---------------------------------------------------------------------------
// Random traces

struct TraceSpec {
  std::uint64_t seed = 0;
  std::uint32_t step_count = 10000;
  std::uint32_t w_read = 45;
  std::uint32_t w_write = 45;
  std::uint32_t w_hypercall = 10;
  std::uint32_t generator = 0;  // 0: boot state, 1: boot plus random accepted setup
};

struct HarnessConfig {
  SystemConfig system = [] {
    SystemConfig c;
    c.mem_mb = 8;
    c.countermeasure = Countermeasure::SelectiveEvict;
    return c;
  }();
};

/// Produces guest operations biased toward interesting addresses: a small
/// hot working set, the uncacheable aliases, the L2 window, code, the
/// hypervisor section, and descriptor-shaped values.
class GuestTraceGenerator {
 public:
  GuestTraceGenerator(const TraceSpec& spec, const Layout& lay)
      : spec_(spec), lay_(lay), rng_(spec.seed * 0x9E3779B97F4A7C15ull + 1) {}

  GuestOp next(const System& s) {
    const std::uint32_t total = spec_.w_read + spec_.w_write + spec_.w_hypercall;
    if (total == 0) return GuestOp::read(0);
    const std::uint32_t r = pick(total);
    if (r < spec_.w_read) return GuestOp::read(random_va(), static_cast<std::uint8_t>(pick(16)));
    if (r < spec_.w_read + spec_.w_write) return GuestOp::write(random_va(), random_value());
    return GuestOp::hypercall(random_call(s));
  }

  Hypercall random_call(const System& s) {
    const HypState& h = s.h;
    std::vector<std::uint32_t> l1s;
    std::vector<std::uint32_t> l2s;
    for (std::uint32_t b = 0; b < h.num_blocks(); ++b) {
      if (h.pgtype[b] == PageType::L1 && b % kL1Blocks == 0) l1s.push_back(b);
      if (h.pgtype[b] == PageType::L2) l2s.push_back(b);
    }
    auto any_l1 = [&] { return l1s.empty() ? lay_.l1_block() : l1s[pick(l1s.size())]; };
    auto any_l2 = [&] { return l2s.empty() ? Layout::kL2Block : l2s[pick(l2s.size())]; };
    const std::uint32_t r = pick(100);
    if (r < 25) return Hypercall::map_l2(any_l2(), pick(64), random_block() << kBlockShift,
                                         random_rights());
    if (r < 38) return Hypercall::unmap_l2(any_l2(), pick(64));
    if (r < 46) return Hypercall::create_l1(table_candidate() & ~(kL1Blocks - 1));
    if (r < 54) return Hypercall::create_l2(table_candidate());
    if (r < 58) return Hypercall::free_l1(any_l1());
    if (r < 63) return Hypercall::free_l2(any_l2());
    if (r < 73) {
      if (pick(3) == 0) {
        // Restore an identity data section the trace may have removed.
        const std::uint32_t mb = data_mb();
        return Hypercall::map_l1(lay_.l1_block(), mb, Layout::mb_base(mb),
                                 MapRights::user_rw(true));
      }
      return Hypercall::map_l1(any_l1(), 0x500 + pick(16),
                               Layout::mb_base(pick(lay_.mem_mb + 1)), random_rights());
    }
    if (r < 78) {
      const std::uint32_t idx = pick(2) ? 0x500 + pick(16) : 0x600 + pick(16);
      return Hypercall::unmap_l1(any_l1(), pick(32) == 0 ? pick(lay_.mem_mb) : idx);
    }
    if (r < 88) {
      return Hypercall::link_l1(any_l1(), 0x600 + pick(16),
                                (any_l2() << kBlockShift) + pick(kL2TablesPerBlock) * 1024);
    }
    return Hypercall::switch_to(pick(4) != 0 ? lay_.l1_block() : any_l1());
  }

 private:
  std::uint32_t pick(std::size_t n) { return static_cast<std::uint32_t>(rng_() % n); }

  std::uint32_t data_mb() {
    return Layout::kFirstDataMb + pick(lay_.last_data_mb() - Layout::kFirstDataMb + 1);
  }

  std::uint32_t hot_offset() { return pick(16384) * kWordBytes; }

  std::uint32_t random_va() {
    const std::uint32_t r = pick(100);
    if (r < 35) return Layout::mb_base(data_mb()) + hot_offset();
    if (r < 55) return Layout::uncached_alias(Layout::mb_base(data_mb()) + hot_offset());
    if (r < 70) return Layout::l2_slot_va(pick(64)) + pick(kWordsPerBlock) * kWordBytes;
    if (r < 80) return Layout::mb_base(Layout::kCodeMb) + hot_offset();
    if (r < 85) return Layout::mb_base(pick(2)) + hot_offset();
    if (r < 92) return Layout::mb_base(lay_.pool_first_mb() + pick(2)) + hot_offset();
    if (r < 96) return (0x500u + pick(16)) << kSectionShift | hot_offset();
    return static_cast<std::uint32_t>(rng_()) & ~(kWordBytes - 1);
  }

  std::uint32_t random_block() {
    const std::uint32_t r = pick(100);
    const std::uint32_t per_mb = kBlocksPerSection;
    if (r < 40) return data_mb() * per_mb + pick(64);
    if (r < 65) return lay_.pool_block(pick(lay_.pool_blocks()));
    if (r < 80) return Layout::kPtMb * per_mb + pick(per_mb);
    if (r < 88) return Layout::kCodeMb * per_mb + pick(per_mb);
    if (r < 95) return pick(per_mb);
    return lay_.mem_mb * per_mb + pick(per_mb);
  }

  std::uint32_t table_candidate() {
    if (pick(2)) return Layout::kPtMb * kBlocksPerSection + 8 + pick(64);
    return lay_.pool_block(pick(64));
  }

  MapRights random_rights() {
    switch (pick(8)) {
      case 0: return MapRights::user_rw(true);
      case 1: return MapRights::user_rw(false);
      case 2: return MapRights::user_ro();
      case 3: return MapRights::user_rx();
      case 4: return MapRights::priv_only();
      case 5: return MapRights{AccessPerm::reserved(), true, true, 0};
      case 6: return MapRights{AccessPerm::all_ro(), false, true, 0};
      default: return MapRights::user_rw(true);
    }
  }

  Word random_value() {
    switch (pick(10)) {
      case 0: return encode_small(random_block() << kBlockShift, random_rights());
      case 1: return encode_section(Layout::mb_base(pick(lay_.mem_mb)), random_rights());
      case 2: return encode_page_table((Layout::kL2Block << kBlockShift) + pick(4) * 1024);
      case 3: return 0;
      default: return static_cast<Word>(rng_());
    }
  }

  TraceSpec spec_;
  Layout lay_;
  std::mt19937_64 rng_;
};

/// Builds the initial state for a trace. Generator 1 extends the boot state
/// with random hypercalls, keeping each only when it is accepted and the
/// invariant still holds afterwards.
[[nodiscard]] inline System initial_state(const TraceSpec& spec, const HarnessConfig& cfg) {
  SystemConfig sc = cfg.system;
  sc.seed = spec.seed;
  System s = System::boot(sc);
  if (spec.generator == 1) {
    TraceSpec setup = spec;
    setup.seed = spec.seed ^ 0x5EEDull;
    GuestTraceGenerator gen(setup, s.layout);
    for (int k = 0; k < 200; ++k) {
      System next = s;
      const Hypercall c = gen.random_call(next);
      if (c.kind == HypercallKind::Switch) continue;
      if (!next.call(c).accepted) continue;
      if (invariant_holds(next)) s = std::move(next);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Observations

namespace detail {

inline std::string step_label(std::uint64_t k, const GuestOp& op) {
  std::string s = "step " + std::to_string(k) + " (" + to_string(op.kind);
  if (op.kind == OpKind::Hypercall) {
    s += " ";
    s += to_string(op.call.kind);
  } else {
    s += " " + hex32(op.va.value);
  }
  return s + ")";
}

/// Secure observation: hypervisor data, coprocessor registers and every
/// address outside guest memory, compared where the step changed anything.
inline std::optional<std::string> secure_obs_diff(const System& pre, const System& post,
                                                  std::span<const PhysAddr> changed) {
  if (!(pre.h == post.h)) return "hypervisor data changed";
  if (!(pre.m.coregs == post.m.coregs)) return "coprocessor registers changed";
  for (PhysAddr pa : changed) {
    if (pre.h.in_guest(pa.block().index)) continue;
    if (core_view(pre.m, pa) != core_view(post.m, pa) ||
        memory_view(pre.m, pa) != memory_view(post.m, pa)) {
      return "secure memory changed at " + hex32(pa.value);
    }
  }
  return std::nullopt;
}

inline std::optional<std::string> set_projection_diff(const System& a, const System& b,
                                                      std::uint32_t i) {
  const auto& g = a.m.cache.geometry();
  const CacheSet& sa = a.m.cache.set(i);
  const CacheSet& sb = b.m.cache.set(i);
  auto layout = [](const CacheSet& s) {
    std::vector<std::pair<Tag, bool>> out;
    for (const auto& [t, line] : s.slice) out.emplace_back(t, line.dirty);
    std::sort(out.begin(), out.end());
    return out;
  };
  if (layout(sa) != layout(sb)) return "cache set " + std::to_string(i) + " tag layout";
  if (lru_filter(sa.history, sa.slice_tags()) != lru_filter(sb.history, sb.slice_tags())) {
    return "cache set " + std::to_string(i) + " filtered history";
  }
  for (const auto& [t, line] : sa.slice) {
    const PhysAddr base = g.line_base(i, t);
    if (!a.h.in_guest(base.block().index)) continue;
    if (sb.find(t)->data != line.data) return "cache line " + hex32(base.value) + " contents";
  }
  return std::nullopt;
}

}  // namespace detail

/// Full guest-observation comparison: registers, mode, coprocessor
/// registers, guest memory and the guest-relevant cache projection.
[[nodiscard]] inline std::optional<std::string> guest_obs_diff(const System& a,
                                                               const System& b) {
  if (a.m.regs != b.m.regs) return "registers";
  if (a.m.mode != b.m.mode) return "mode";
  if (!(a.m.coregs == b.m.coregs)) return "coprocessor registers";
  if (a.h.g_m != b.h.g_m) return "guest memory region";
  if (!(a.m.cache.geometry() == b.m.cache.geometry())) return "cache geometry";
  for (std::uint32_t bl = 0; bl < a.h.num_blocks(); ++bl) {
    if (!a.h.in_guest(bl) || a.m.mem.shares_block(b.m.mem, Block{bl})) continue;
    if (a.m.mem.block_data(Block{bl}) != b.m.mem.block_data(Block{bl})) {
      return "guest memory block " + hex32(bl);
    }
  }
  for (std::uint32_t i = 0; i < a.m.cache.num_sets(); ++i) {
    if (auto d = detail::set_projection_diff(a, b, i)) return d;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Trace engine

enum TraceCheck : std::uint32_t {
  kCheckDerivability = 1u << 0,
  kCheckMmuIntegrity = 1u << 1,
  kCheckExfiltration = 1u << 2,
  kCheckInfiltration = 1u << 3,
  kCheckInvariant = 1u << 4,
  kCheckAll = 0x1f,
};

namespace detail {

/// MMU equivalence across one step. When the registers agree and no word
/// the walk reads changed its core view, the walks are identical.
inline bool step_mmu_equivalent(const MachineState& pre, const MachineState& post,
                                const AccessMap& pre_map, std::span<const PhysAddr> changed) {
  if (pre.coregs == post.coregs) {
    bool touched = false;
    for (PhysAddr pa : changed) {
      if (pre_map.in_footprint(pa) && core_view(pre, pa) != core_view(post, pa)) {
        touched = true;
        break;
      }
    }
    if (!touched) return true;
  }
  return mmu_equivalent(pre, post);
}

/// Changed-address union and changed cache sets of two step pairs.
inline void incremental_guest_diff(const System& pre1, const System& post1, const System& pre2,
                                   const System& post2, std::span<const PhysAddr> ch1,
                                   std::span<const PhysAddr> ch2,
                                   std::optional<std::string>& out) {
  std::vector<PhysAddr> all(ch1.begin(), ch1.end());
  all.insert(all.end(), ch2.begin(), ch2.end());
  for (PhysAddr pa : all) {
    if (!post1.h.in_guest(pa.block().index)) continue;
    if (!(addr_state(post1.m, pa) == addr_state(post2.m, pa))) {
      out = "guest-visible state differs at " + hex32(pa.value);
      return;
    }
  }
  for (std::uint32_t i = 0; i < post1.m.cache.num_sets(); ++i) {
    if (post1.m.cache.shares_set(pre1.m.cache, i) && post2.m.cache.shares_set(pre2.m.cache, i)) {
      continue;
    }
    if (auto d = set_projection_diff(post1, post2, i)) {
      out = *d;
      return;
    }
  }
  if (post1.m.regs != post2.m.regs) out = "registers";
  else if (!(post1.m.coregs == post2.m.coregs)) out = "coprocessor registers";
}

}  // namespace detail

using StateTamper = std::function<void(System&)>;

/// Runs one random trace and applies the selected checks to every step.
/// Read/write steps are checked for derivability, MMU equivalence and
/// unchanged secure observations; hypercall steps re-establish the
/// invariant. The two-trace check runs a twin whose hypervisor-private
/// memory is randomized.
[[nodiscard]] inline CheckResult run_trace_checks(const std::string& id, const TraceSpec& spec,
                                                  const HarnessConfig& cfg, std::uint32_t checks,
                                                  const StateTamper& tamper = {}) {
  CheckResult res;
  res.id = id;
  res.seed = spec.seed;
  System s = initial_state(spec, cfg);
  if (tamper) tamper(s);
  if (checks & kCheckInvariant) {
    if (auto v = invariant_violation(s)) {
      res.fail("initial state: " + *v);
      return res;
    }
  }
  std::optional<System> twin;
  if (checks & kCheckInfiltration) {
    twin = s;
    std::mt19937_64 noise(spec.seed ^ 0xA11A5ull);
    for (std::uint32_t b = 0; b < twin->h.num_blocks(); ++b) {
      if (twin->h.in_guest(b)) continue;
      for (std::uint32_t k = 0; k < kWordsPerBlock; ++k) {
        twin->m.mem.write(block_base(Block{b}) + k * kWordBytes, static_cast<Word>(noise()));
      }
    }
    if (auto d = guest_obs_diff(s, *twin)) {
      res.fail("initial guest observations differ: " + *d);
      return res;
    }
  }
  GuestTraceGenerator gen(spec, s.layout);
  AccessMap map(s.m);
  for (std::uint64_t k = 0; k < spec.step_count; ++k) {
    const GuestOp op = gen.next(s);
    const System pre = s;
    const StepResult r = s.step(op);
    res.steps = k + 1;
    const std::string where = detail::step_label(k, op);
    std::vector<PhysAddr> changed;
    if (checks & (kCheckDerivability | kCheckMmuIntegrity | kCheckExfiltration |
                  kCheckInfiltration)) {
      changed = changed_addresses(pre.m, s.m);
    }
    if (op.kind != OpKind::Hypercall) {
      if (checks & kCheckDerivability) {
        const DerivabilityWitness w = check_derivability(pre.m, s.m, &map);
        if (!w.ok()) res.fail(where + ": " + w.describe());
      }
      if ((checks & kCheckMmuIntegrity) && !detail::step_mmu_equivalent(pre.m, s.m, map, changed)) {
        res.fail(where + ": translation changed");
      }
      if (checks & kCheckExfiltration) {
        if (auto d = detail::secure_obs_diff(pre, s, changed)) res.fail(where + ": " + *d);
      }
    } else {
      map = AccessMap(s.m);
      if (checks & kCheckInvariant) {
        if (auto v = invariant_violation(s)) res.fail(where + ": " + *v);
      }
    }
    if (twin) {
      const System pre2 = *twin;
      const StepResult r2 = twin->step(op);
      if (r2.kind != r.kind || r2.value != r.value || r2.fault != r.fault ||
          !(r2.verdict == r.verdict)) {
        res.fail(where + ": step results differ between traces");
      } else {
        const auto changed2 = changed_addresses(pre2.m, twin->m);
        std::optional<std::string> d;
        detail::incremental_guest_diff(pre, s, pre2, *twin, changed, changed2, d);
        if (d) res.fail(where + ": guest observations differ: " + *d);
      }
    }
    if (!res.pass) return res;
  }
  return res;
}

[[nodiscard]] inline CheckResult check_derivability_trace(const TraceSpec& spec,
                                                          const HarnessConfig& cfg = {}) {
  return run_trace_checks("derivability", spec, cfg, kCheckDerivability | kCheckMmuIntegrity);
}

[[nodiscard]] inline CheckResult check_no_exfiltration(const TraceSpec& spec,
                                                       const HarnessConfig& cfg = {},
                                                       const StateTamper& tamper = {}) {
  return run_trace_checks("no-exfiltration", spec, cfg, kCheckExfiltration, tamper);
}

[[nodiscard]] inline CheckResult check_no_infiltration(const TraceSpec& spec,
                                                       const HarnessConfig& cfg = {}) {
  return run_trace_checks("no-infiltration", spec, cfg, kCheckInfiltration);
}

/// Paired run of an explicit op stream from two given states. The states
/// must agree on guest observations, otherwise the check is skipped.
[[nodiscard]] inline CheckResult check_two_trace(System a, System b,
                                                 std::span<const GuestOp> ops) {
  CheckResult res;
  res.id = "two-trace";
  if (auto d = guest_obs_diff(a, b)) {
    res.applicable = false;
    res.witness = "precondition: " + *d;
    return res;
  }
  for (std::uint64_t k = 0; k < ops.size(); ++k) {
    const StepResult ra = a.step(ops[k]);
    const StepResult rb = b.step(ops[k]);
    res.steps = k + 1;
    if (ra.kind != rb.kind || ra.value != rb.value || !(ra.verdict == rb.verdict)) {
      res.fail(detail::step_label(k, ops[k]) + ": step results differ");
      return res;
    }
    if (auto d = guest_obs_diff(a, b)) {
      res.fail(detail::step_label(k, ops[k]) + ": " + *d);
      return res;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Reference counters

/// Random hypercall traces; stored counters must equal the recount after
/// every accepted call.
[[nodiscard]] inline CheckResult check_refcounts(const TraceSpec& spec,
                                                 const HarnessConfig& cfg = {},
                                                 HypFaults faults = {}) {
  CheckResult res;
  res.id = "refcount";
  res.seed = spec.seed;
  System s = initial_state(spec, cfg);
  s.h.faults = faults;
  GuestTraceGenerator gen(spec, s.layout);
  std::uint64_t accepted = 0;
  for (std::uint64_t k = 0; k < spec.step_count; ++k) {
    const Hypercall c = gen.random_call(s);
    const Verdict v = s.call(c);
    res.steps = k + 1;
    if (!v.accepted) continue;
    ++accepted;
    res.events = accepted;
    if (auto d = refcount_mismatch(s)) {
      res.fail("after accepted " + std::string(to_string(c.kind)) + " #" +
               std::to_string(accepted) + ": " + *d);
      return res;
    }
  }
  res.witness = std::to_string(accepted) + " accepted";
  return res;
}

// ---------------------------------------------------------------------------
// Countermeasure proof obligations

namespace detail {

inline std::set<std::uint32_t> critical_blocks(const HypState& h) {
  std::set<std::uint32_t> out;
  for (std::uint32_t b = 0; b < h.num_blocks(); ++b) {
    if (!h.in_guest(b) || h.pgtype[b] != PageType::Data) out.insert(b);
  }
  return out;
}

}  // namespace detail

/// Runs the countermeasure's obligations as online monitors over a random
/// trace. Every applicable mode also checks that each word a handler read
/// equals the pre-state memory view.
[[nodiscard]] inline CheckResult check_obligations(Countermeasure mode, const TraceSpec& spec,
                                                   HarnessConfig cfg = {},
                                                   const StateTamper& tamper = {}) {
  CheckResult res;
  res.id = std::string("obligations/") + to_string(mode);
  res.seed = spec.seed;
  if (mode == Countermeasure::None) {
    res.applicable = false;
    res.witness = "no obligations without a countermeasure";
    return res;
  }
  cfg.system.countermeasure = mode;
  System s = initial_state(spec, cfg);
  if (tamper) tamper(s);
  s.record_handler_reads = true;
  GuestTraceGenerator gen(spec, s.layout);

  auto acpt_state = [&](const System& st) -> std::optional<std::string> {
    const AccessMap map(st.m);
    for (std::uint32_t b = 0; b < st.h.num_blocks(); ++b) {
      if (st.h.always_cacheable(b) && map.has(Block{b}, AccessMap::kAnyUncached)) {
        return "uncacheable alias to always-cacheable block " + hex32(b);
      }
      if (st.h.pgtype[b] != PageType::Data && !st.h.always_cacheable(b)) {
        return "table block " + hex32(b) + " outside the always-cacheable region";
      }
    }
    return std::nullopt;
  };

  if (mode == Countermeasure::Acpt) {
    if (auto d = acpt_state(s)) {
      res.fail("initial state: " + *d);
      return res;
    }
  }
  for (std::uint64_t k = 0; k < spec.step_count; ++k) {
    const GuestOp op = gen.next(s);
    const System pre = s;
    const StepResult r = s.step(op);
    res.steps = k + 1;
    const std::string where = detail::step_label(k, op);
    if (mode == Countermeasure::Acpt) {
      if (auto d = acpt_state(s)) res.fail(where + ": " + *d);
      for (std::uint32_t b : r.trace.blocks_read) {
        if (!s.h.always_cacheable(b)) {
          res.fail(where + ": handler read " + hex32(b) + " outside the always-cacheable region");
        }
      }
    }
    if (mode == Countermeasure::SelectiveEvict && op.kind == OpKind::Hypercall) {
      const auto cr = detail::critical_blocks(pre.h);
      const auto& hist = s.h.cleaned_history;
      for (std::uint32_t b : r.trace.blocks_read) {
        if (!cr.count(b) && !hist.count(b)) {
          res.fail(where + ": handler read " + hex32(b) + " neither critical nor cleaned");
        }
      }
      for (std::uint32_t b : detail::critical_blocks(s.h)) {
        if (!cr.count(b) && !hist.count(b)) {
          res.fail(where + ": block " + hex32(b) + " became critical without cleaning");
        }
      }
    }
    for (const auto& [pa, v] : r.trace.values) {
      if (v != memory_view(pre.m, pa)) {
        res.fail(where + ": handler read stale value at " + hex32(pa.value));
        break;
      }
    }
    if (!res.pass) return res;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Cache-model lemmas

using HistoryFilter = std::function<History(std::span<const Action>)>;

struct LemmaOptions {
  std::uint32_t max_len = 1000;
  std::uint32_t max_ways = 8;
  HistoryFilter filter;  // defaults to the LRU filter
};

namespace detail {

/// Independent LRU reference: per-tag last-use stamps.
struct StampLru {
  std::vector<std::pair<Tag, std::uint64_t>> lines;
  std::uint64_t clock = 0;

  [[nodiscard]] bool present(Tag t) const {
    return std::any_of(lines.begin(), lines.end(), [&](const auto& e) { return e.first == t; });
  }
  void use(Tag t) {
    for (auto& e : lines) {
      if (e.first == t) e.second = ++clock;
    }
  }
  void insert(Tag t) { lines.emplace_back(t, ++clock); }
  void remove(Tag t) {
    std::erase_if(lines, [&](const auto& e) { return e.first == t; });
  }
  [[nodiscard]] Tag oldest() const {
    return std::min_element(lines.begin(), lines.end(),
                            [](const auto& a, const auto& b) { return a.second < b.second; })
        ->first;
  }
  [[nodiscard]] LruQueue order() const {
    auto sorted = lines;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.second > b.second; });
    LruQueue q;
    for (const auto& e : sorted) q.push_back(e.first);
    return q;
  }
};

inline std::optional<std::string> check_history(std::span<const Action> h, const StampLru& ref,
                                                std::uint32_t ways, std::uint32_t universe,
                                                const HistoryFilter& filter) {
  const History f = filter ? filter(h) : lru_filter(h);
  const LruQueue q = cons_queue(h);
  if (q != cons_queue(f)) return "Cons differs after filtering";
  if (q != ref.order()) return "Cons differs from the reference LRU order";
  for (Tag t = 0; t < universe; ++t) {
    if (evict_select(h, t, ways) != evict_select(f, t, ways)) {
      return "eviction choice differs after filtering";
    }
  }
  std::set<Tag> slice;
  for (const auto& e : ref.lines) slice.insert(e.first);
  if (present_tags(h) != slice) return "present tags disagree with the slice";
  return std::nullopt;
}

}  // namespace detail

/// Random legal histories checked against the filter lemmas and the
/// present-tag invariant, plus random operation sequences on a real cache.
[[nodiscard]] inline CheckResult check_cache_lemmas(std::uint64_t seed, std::uint32_t n,
                                                    const LemmaOptions& opt = {}) {
  CheckResult res;
  res.id = "cache-lemmas";
  res.seed = seed;
  std::mt19937_64 rng(seed);
  auto pick = [&](std::uint64_t k) { return static_cast<std::uint32_t>(rng() % k); };
  for (std::uint32_t it = 0; it < n; ++it) {
    const std::uint32_t ways = 1 + pick(opt.max_ways);
    const std::uint32_t universe = ways + 1 + pick(8);
    const std::uint32_t len = pick(opt.max_len + 1);
    std::set<std::uint32_t> probes;
    for (int k = 0; k < 4 && len > 0; ++k) probes.insert(pick(len));
    History h;
    detail::StampLru ref;
    while (h.size() < len) {
      const Tag t = pick(universe);
      if (ref.present(t)) {
        const std::uint32_t r = pick(10);
        if (r == 0) {
          h.push_back(Action::evict(t));
          ref.remove(t);
        } else {
          h.push_back(r < 6 ? Action::touch_r(t) : Action::touch_w(t));
          ref.use(t);
        }
      } else {
        if (ref.lines.size() == ways) {
          const Tag victim = ref.oldest();
          h.push_back(Action::evict(victim));
          ref.remove(victim);
        }
        h.push_back(Action::fill(t));
        ref.insert(t);
      }
      if (probes.count(static_cast<std::uint32_t>(h.size()))) {
        if (auto d = detail::check_history(h, ref, ways, universe, opt.filter)) {
          res.fail("history " + std::to_string(it) + " prefix " + std::to_string(h.size()) +
                   ": " + *d);
          return res;
        }
      }
    }
    if (auto d = detail::check_history(h, ref, ways, universe, opt.filter)) {
      res.fail("history " + std::to_string(it) + ": " + *d);
      return res;
    }
    ++res.steps;
  }
  // The simulator's own sets keep the same invariants.
  const std::uint32_t cache_runs = std::min<std::uint32_t>(n, 50);
  for (std::uint32_t it = 0; it < cache_runs; ++it) {
    CacheGeometry g;
    g.num_sets = 4;
    g.ways = 1u << pick(3);
    g.line_words = 4;
    PhysMemory mem(64 * kBlockBytes);
    Cache c(g, seed + it);
    for (std::uint32_t k = 0; k < 200; ++k) {
      const std::uint32_t pa = pick(64 * kWordsPerBlock / 64) * 64 * kWordBytes;
      const PhysAddr p{pa};
      const VirtAddr v{pa};
      switch (pick(5)) {
        case 0: c.read(mem, v, p); break;
        case 1: c.write(mem, v, p, static_cast<Word>(rng())); break;
        case 2: c.clean(mem, v, p); break;
        case 3: c.invalidate(mem, v, p); break;
        default: c.read(mem, v, p); break;
      }
      for (std::uint32_t i = 0; i < g.num_sets; ++i) {
        const CacheSet& set = c.set(i);
        if (present_tags(set.history) != set.slice_tags() || set.lru != cons_queue(set.history)) {
          res.fail("cache run " + std::to_string(it) + " set " + std::to_string(i) +
                   ": history disagrees with the slice");
          return res;
        }
      }
    }
  }
  return res;
}

/// Flips a deliberate bug into the LRU filter: the last kept TouchR is lost.
[[nodiscard]] inline History lru_filter_drop_touch(std::span<const Action> h) {
  History f = lru_filter(h);
  for (auto it = f.rbegin(); it != f.rend(); ++it) {
    if (it->kind == ActionKind::TouchR) {
      f.erase(std::next(it).base());
      break;
    }
  }
  return f;
}

}  // namespace aliasim
