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

// Direct-paging hypervisor: page typing, reference counting, validation of
// guest page tables in place, and countermeasure-mediated access to guest
// memory.

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "aliasim/descriptors.hpp"
#include "aliasim/machine.hpp"

namespace aliasim {

enum class PageType : std::uint8_t { Data, L1, L2 };

enum class Countermeasure : std::uint8_t { None, Acpt, SelectiveEvict, FullFlush, IncoherencyDetect };

inline const char* to_string(PageType t) {
  switch (t) {
    case PageType::Data: return "data";
    case PageType::L1: return "L1";
    case PageType::L2: return "L2";
  }
  return "?";
}

inline const char* to_string(Countermeasure c) {
  switch (c) {
    case Countermeasure::None: return "none";
    case Countermeasure::Acpt: return "acpt";
    case Countermeasure::SelectiveEvict: return "selective";
    case Countermeasure::FullFlush: return "flush";
    case Countermeasure::IncoherencyDetect: return "detect";
  }
  return "?";
}

inline std::optional<Countermeasure> parse_countermeasure(const std::string& s) {
  for (auto c : {Countermeasure::None, Countermeasure::Acpt, Countermeasure::SelectiveEvict,
                 Countermeasure::FullFlush, Countermeasure::IncoherencyDetect}) {
    if (s == to_string(c)) return c;
  }
  return std::nullopt;
}

/// Counters are 30 bits wide; an update past the limit is rejected.
inline constexpr std::uint32_t kRefLimit = (1u << 30) - 1;

struct RefCounters {
  std::uint32_t wt = 0;
  std::uint32_t ex = 0;
  std::uint32_t ptlink = 0;

  friend bool operator==(const RefCounters&, const RefCounters&) = default;
};

enum class RejectReason : std::uint8_t {
  RefNonZero,
  OutsideGuestMemory,
  PolicyViolation,
  Unpredictable,
  OutsideAlwaysCacheable,
  IncoherentInput,
  RefOverflow,
  WrongType,
  BadArgument,
  // raised by the W^X monitor
  WX,
  BadSignature,
  ConflictingAliases,
  ExecutablePT,
};

inline const char* to_string(RejectReason r) {
  switch (r) {
    case RejectReason::RefNonZero: return "RefNonZero";
    case RejectReason::OutsideGuestMemory: return "OutsideGuestMemory";
    case RejectReason::PolicyViolation: return "PolicyViolation";
    case RejectReason::Unpredictable: return "Unpredictable";
    case RejectReason::OutsideAlwaysCacheable: return "OutsideAlwaysCacheable";
    case RejectReason::IncoherentInput: return "IncoherentInput";
    case RejectReason::RefOverflow: return "RefOverflow";
    case RejectReason::WrongType: return "WrongType";
    case RejectReason::BadArgument: return "BadArgument";
    case RejectReason::WX: return "WX";
    case RejectReason::BadSignature: return "BadSignature";
    case RejectReason::ConflictingAliases: return "ConflictingAliases";
    case RejectReason::ExecutablePT: return "ExecutablePT";
  }
  return "?";
}

inline constexpr std::uint32_t kNoEntry = 0xFFFFFFFFu;

struct Verdict {
  bool accepted = true;
  RejectReason reason = RejectReason::PolicyViolation;
  std::uint32_t entry = kNoEntry;  // first offending table entry, if any

  static Verdict accept() { return {}; }
  static Verdict reject(RejectReason r, std::uint32_t entry = kNoEntry) {
    return {false, r, entry};
  }

  friend bool operator==(const Verdict&, const Verdict&) = default;
};

enum class HypercallKind : std::uint8_t {
  Switch,
  CreateL1,
  CreateL2,
  FreeL1,
  FreeL2,
  MapL1,
  MapL2,
  UnmapL1,
  UnmapL2,
  LinkL1,
};

inline const char* to_string(HypercallKind k) {
  switch (k) {
    case HypercallKind::Switch: return "switch";
    case HypercallKind::CreateL1: return "create_l1";
    case HypercallKind::CreateL2: return "create_l2";
    case HypercallKind::FreeL1: return "free_l1";
    case HypercallKind::FreeL2: return "free_l2";
    case HypercallKind::MapL1: return "map_l1";
    case HypercallKind::MapL2: return "map_l2";
    case HypercallKind::UnmapL1: return "unmap_l1";
    case HypercallKind::UnmapL2: return "unmap_l2";
    case HypercallKind::LinkL1: return "link_l1";
  }
  return "?";
}

/// A page-table request. `bl` names the table (first block for an L1);
/// `target` is a section base (MapL1), a page base (MapL2) or the 1 KB L2
/// table address (LinkL1).
struct Hypercall {
  HypercallKind kind = HypercallKind::Switch;
  std::uint32_t bl = 0;
  std::uint32_t idx = 0;
  std::uint32_t target = 0;
  MapRights rights{};

  friend bool operator==(const Hypercall&, const Hypercall&) = default;

  static Hypercall switch_to(std::uint32_t bl) { return {HypercallKind::Switch, bl}; }
  static Hypercall create_l1(std::uint32_t bl) { return {HypercallKind::CreateL1, bl}; }
  static Hypercall create_l2(std::uint32_t bl) { return {HypercallKind::CreateL2, bl}; }
  static Hypercall free_l1(std::uint32_t bl) { return {HypercallKind::FreeL1, bl}; }
  static Hypercall free_l2(std::uint32_t bl) { return {HypercallKind::FreeL2, bl}; }
  static Hypercall map_l1(std::uint32_t bl, std::uint32_t idx, std::uint32_t section_base,
                          MapRights r) {
    return {HypercallKind::MapL1, bl, idx, section_base, r};
  }
  static Hypercall map_l2(std::uint32_t bl, std::uint32_t idx, std::uint32_t page_base,
                          MapRights r) {
    return {HypercallKind::MapL2, bl, idx, page_base, r};
  }
  static Hypercall unmap_l1(std::uint32_t bl, std::uint32_t idx) {
    return {HypercallKind::UnmapL1, bl, idx};
  }
  static Hypercall unmap_l2(std::uint32_t bl, std::uint32_t idx) {
    return {HypercallKind::UnmapL2, bl, idx};
  }
  static Hypercall link_l1(std::uint32_t bl, std::uint32_t idx, std::uint32_t l2_table,
                           std::uint8_t domain = 0) {
    MapRights r{};
    r.domain = domain;
    return {HypercallKind::LinkL1, bl, idx, l2_table, r};
  }
};

/// Test-only fault injection.
struct HypFaults {
  bool skip_link_refcount = false;

  friend bool operator==(const HypFaults&, const HypFaults&) = default;
};

struct HypState {
  std::vector<PageType> pgtype;
  std::vector<RefCounters> refs;
  std::vector<std::uint8_t> g_m;
  std::vector<std::uint8_t> m_ac;
  Countermeasure countermeasure = Countermeasure::None;
  std::set<std::uint32_t> cleaned_history;
  HypFaults faults{};

  HypState() = default;
  explicit HypState(std::uint32_t num_blocks)
      : pgtype(num_blocks, PageType::Data),
        refs(num_blocks),
        g_m(num_blocks, 0),
        m_ac(num_blocks, 0) {}

  [[nodiscard]] std::uint32_t num_blocks() const {
    return static_cast<std::uint32_t>(pgtype.size());
  }
  [[nodiscard]] bool valid_block(std::uint32_t b) const { return b < pgtype.size(); }
  [[nodiscard]] bool in_guest(std::uint32_t b) const { return valid_block(b) && g_m[b] != 0; }
  [[nodiscard]] bool always_cacheable(std::uint32_t b) const {
    return valid_block(b) && m_ac[b] != 0;
  }

  friend bool operator==(const HypState&, const HypState&) = default;
};

// ---------------------------------------------------------------------------
// Page-table policy

/// Blocks of a table under creation are judged with their future type.
struct PolicyContext {
  const HypState& hyp;
  std::uint32_t self_first = 0;
  std::uint32_t self_count = 0;
  PageType self_type = PageType::Data;

  [[nodiscard]] PageType type_of(std::uint32_t b) const {
    if (b >= self_first && b < self_first + self_count) return self_type;
    return hyp.pgtype[b];
  }
};

namespace detail {

inline std::optional<RejectReason> check_mapping(const PolicyContext& ctx, std::uint32_t first,
                                                 std::uint32_t count, const MapRights& r) {
  const HypState& h = ctx.hyp;
  if (first + count > h.num_blocks()) return RejectReason::OutsideGuestMemory;
  for (std::uint32_t b = first; b < first + count; ++b) {
    if (r.guest_accessible() && !h.in_guest(b)) return RejectReason::OutsideGuestMemory;
  }
  if (r.user_writable()) {
    for (std::uint32_t b = first; b < first + count; ++b) {
      if (ctx.type_of(b) != PageType::Data) return RejectReason::PolicyViolation;
    }
  }
  if (h.countermeasure == Countermeasure::Acpt && !r.cacheable) {
    for (std::uint32_t b = first; b < first + count; ++b) {
      if (h.always_cacheable(b)) return RejectReason::OutsideAlwaysCacheable;
    }
  }
  return std::nullopt;
}

}  // namespace detail

[[nodiscard]] inline std::optional<RejectReason> check_l1_entry(const PolicyContext& ctx, Word w) {
  const L1Desc d = decode_l1(w);
  switch (d.kind) {
    case L1Kind::Fault: return std::nullopt;
    case L1Kind::Unpredictable: return RejectReason::Unpredictable;
    case L1Kind::Section:
      return detail::check_mapping(ctx, d.base >> kBlockShift, kBlocksPerSection, d.rights);
    case L1Kind::PageTable: {
      const std::uint32_t b = d.base >> kBlockShift;
      if (!ctx.hyp.valid_block(b) || ctx.type_of(b) != PageType::L2) {
        return RejectReason::PolicyViolation;
      }
      return std::nullopt;
    }
  }
  return RejectReason::Unpredictable;
}

[[nodiscard]] inline std::optional<RejectReason> check_l2_entry(const PolicyContext& ctx, Word w) {
  const L2Desc d = decode_l2(w);
  switch (d.kind) {
    case L2Kind::Fault: return std::nullopt;
    case L2Kind::Unpredictable: return RejectReason::Unpredictable;
    case L2Kind::Small: return detail::check_mapping(ctx, d.base >> kBlockShift, 1, d.rights);
  }
  return RejectReason::Unpredictable;
}

/// Checks a full L1 table. `self_block` names the table's own first block
/// when validating for creation.
[[nodiscard]] inline Verdict validate_l1(const HypState& hyp, std::span<const Word> contents,
                                         std::optional<std::uint32_t> self_block = std::nullopt) {
  if (contents.size() != kL1Entries) throw SimError("validate_l1: expects 4096 entries");
  const PolicyContext ctx = self_block ? PolicyContext{hyp, *self_block, kL1Blocks, PageType::L1}
                                       : PolicyContext{hyp};
  for (std::uint32_t i = 0; i < kL1Entries; ++i) {
    if (auto r = check_l1_entry(ctx, contents[i])) return Verdict::reject(*r, i);
  }
  return Verdict::accept();
}

/// Checks the four packed L2 tables of one block.
[[nodiscard]] inline Verdict validate_l2(const HypState& hyp, std::span<const Word> contents,
                                         std::optional<std::uint32_t> self_block = std::nullopt) {
  if (contents.size() != kL2Entries * kL2TablesPerBlock) {
    throw SimError("validate_l2: expects 1024 entries");
  }
  const PolicyContext ctx =
      self_block ? PolicyContext{hyp, *self_block, 1, PageType::L2} : PolicyContext{hyp};
  for (std::uint32_t i = 0; i < contents.size(); ++i) {
    if (auto r = check_l2_entry(ctx, contents[i])) return Verdict::reject(*r, i);
  }
  return Verdict::accept();
}

// ---------------------------------------------------------------------------
// Reference bookkeeping

struct RefDelta {
  std::int64_t wt = 0;
  std::int64_t ex = 0;
  std::int64_t ptlink = 0;
};

using RefDeltas = std::map<std::uint32_t, RefDelta>;

inline void add_l1_entry_refs(RefDeltas& out, Word w, int sign, bool count_link = true) {
  const L1Desc d = decode_l1(w);
  if (d.kind == L1Kind::Section) {
    const std::uint32_t first = d.base >> kBlockShift;
    const bool wt = d.rights.user_writable();
    const bool ex = d.rights.user_executable();
    if (!wt && !ex) return;
    for (std::uint32_t b = first; b < first + kBlocksPerSection; ++b) {
      if (wt) out[b].wt += sign;
      if (ex) out[b].ex += sign;
    }
  } else if (d.kind == L1Kind::PageTable && count_link) {
    out[d.base >> kBlockShift].ptlink += sign;
  }
}

inline void add_l2_entry_refs(RefDeltas& out, Word w, int sign) {
  const L2Desc d = decode_l2(w);
  if (d.kind != L2Kind::Small) return;
  const std::uint32_t b = d.base >> kBlockShift;
  if (d.rights.user_writable()) out[b].wt += sign;
  if (d.rights.user_executable()) out[b].ex += sign;
}

/// Applies `deltas` atomically; fails without touching anything when a
/// counter would leave [0, kRefLimit].
[[nodiscard]] inline bool apply_ref_deltas(HypState& h, const RefDeltas& deltas) {
  auto in_bounds = [](std::uint32_t v, std::int64_t d) {
    const std::int64_t n = static_cast<std::int64_t>(v) + d;
    return n >= 0 && n <= kRefLimit;
  };
  for (const auto& [b, d] : deltas) {
    if (!h.valid_block(b)) return false;
    const RefCounters& rc = h.refs[b];
    if (!in_bounds(rc.wt, d.wt) || !in_bounds(rc.ex, d.ex) || !in_bounds(rc.ptlink, d.ptlink)) {
      return false;
    }
  }
  for (const auto& [b, d] : deltas) {
    RefCounters& rc = h.refs[b];
    rc.wt = static_cast<std::uint32_t>(rc.wt + d.wt);
    rc.ex = static_cast<std::uint32_t>(rc.ex + d.ex);
    rc.ptlink = static_cast<std::uint32_t>(rc.ptlink + d.ptlink);
  }
  return true;
}

// ---------------------------------------------------------------------------
// Hypervisor access to guest memory

/// What one handler invocation read and cleaned.
struct HandlerTrace {
  std::vector<std::uint32_t> blocks_read;  // in order of first access
  std::set<std::uint32_t> cleaned;
  bool flushed = false;
  bool incoherent = false;
  bool record_values = false;
  std::vector<std::pair<PhysAddr, Word>> values;  // every word read, when recorded
};

struct IncoherentInputError {
  PhysAddr pa;
};

/// Reads and writes guest memory through the hypervisor's cacheable 1-1
/// mapping, applying the per-block countermeasure action on first access.
class HypReader {
 public:
  HypReader(MachineState& m, HypState& h, HandlerTrace& trace) : m_(m), h_(h), trace_(trace) {}

  Word read(PhysAddr pa) {
    touch(pa.block());
    const Word v = m_.cache.read(m_.mem, VirtAddr{pa.value}, pa);
    if (trace_.record_values) trace_.values.emplace_back(pa, v);
    return v;
  }

  void write(PhysAddr pa, Word v) {
    touch(pa.block());
    m_.cache.write(m_.mem, VirtAddr{pa.value}, pa, v);
  }

  std::vector<Word> read_range(PhysAddr base, std::uint32_t words) {
    std::vector<Word> out(words);
    for (std::uint32_t i = 0; i < words; ++i) out[i] = read(base + i * kWordBytes);
    return out;
  }

 private:
  void touch(Block b) {
    if (b.index == last_) return;
    last_ = b.index;
    if (!seen_.insert(b.index).second) return;
    trace_.blocks_read.push_back(b.index);
    const std::uint32_t line = m_.cache.geometry().line_bytes();
    const PhysAddr base = block_base(b);
    switch (h_.countermeasure) {
      case Countermeasure::SelectiveEvict:
        for (std::uint32_t off = 0; off < kBlockBytes; off += line) {
          m_.cache.invalidate(m_.mem, VirtAddr{(base + off).value}, base + off);
        }
        h_.cleaned_history.insert(b.index);
        trace_.cleaned.insert(b.index);
        break;
      case Countermeasure::IncoherencyDetect:
        // Dirty lines hold legitimate newer data; write them back so the
        // cacheable and uncacheable reads can be compared.
        for (std::uint32_t off = 0; off < kBlockBytes; off += line) {
          m_.cache.clean(m_.mem, VirtAddr{(base + off).value}, base + off);
        }
        for (std::uint32_t off = 0; off < kBlockBytes; off += kWordBytes) {
          const PhysAddr pa = base + off;
          if (m_.cache.read(m_.mem, VirtAddr{pa.value}, pa) != m_.mem.read(pa)) {
            trace_.incoherent = true;
            throw IncoherentInputError{pa};
          }
        }
        break;
      default: break;
    }
  }

  MachineState& m_;
  HypState& h_;
  HandlerTrace& trace_;
  std::set<std::uint32_t> seen_;
  std::uint32_t last_ = 0xFFFFFFFFu;
};

struct HypRead {
  Word value = 0;
  bool incoherent = false;
};

/// Single word read by the hypervisor from a guest block.
inline HypRead hyp_read_guest(MachineState& m, HypState& h, std::uint32_t bl,
                              std::uint32_t offset) {
  if (!h.in_guest(bl)) throw SimError("hyp_read_guest: block outside guest memory");
  HandlerTrace trace;
  HypReader reader(m, h, trace);
  try {
    return {reader.read(block_base(Block{bl}) + (offset & (kBlockBytes - 1)))};
  } catch (const IncoherentInputError&) {
    return {0, true};
  }
}

// ---------------------------------------------------------------------------
// Dispatch

/// Everything the monitor needs to judge a request before it commits.
struct MonitorQuery {
  const Hypercall& call;
  const HypState& hyp;
  std::span<const Word> l1_entries;  // new L1 entries (table or single map)
  std::span<const Word> l2_entries;  // new L2 entries (table or single map)
  HypReader& reader;
};

using MonitorHook = std::function<Verdict(const MonitorQuery&)>;

struct DispatchResult {
  Verdict verdict;
  HandlerTrace trace;
};

namespace detail {

inline bool l1_base_ok(const HypState& h, std::uint32_t bl) {
  return bl % kL1Blocks == 0 && bl + kL1Blocks <= h.num_blocks();
}

inline bool all_typed(const HypState& h, std::uint32_t first, std::uint32_t n, PageType t) {
  for (std::uint32_t b = first; b < first + n; ++b) {
    if (h.pgtype[b] != t) return false;
  }
  return true;
}

inline Verdict run_handler(MachineState& m, HypState& h, const Hypercall& c, HypReader& rd,
                           const MonitorHook& monitor) {
  auto ask_monitor = [&](std::span<const Word> l1, std::span<const Word> l2) {
    if (!monitor) return Verdict::accept();
    return monitor(MonitorQuery{c, h, l1, l2, rd});
  };
  const bool acpt = h.countermeasure == Countermeasure::Acpt;

  switch (c.kind) {
    case HypercallKind::Switch: {
      if (!l1_base_ok(h, c.bl)) return Verdict::reject(RejectReason::BadArgument);
      if (!all_typed(h, c.bl, kL1Blocks, PageType::L1)) {
        return Verdict::reject(RejectReason::WrongType);
      }
      if (auto v = ask_monitor({}, {}); !v.accepted) return v;
      m.coregs.ttbr0 = block_base(Block{c.bl});
      m.coregs.mmu_enabled = true;
      return Verdict::accept();
    }

    case HypercallKind::CreateL1:
    case HypercallKind::CreateL2: {
      const bool is_l1 = c.kind == HypercallKind::CreateL1;
      const std::uint32_t n = is_l1 ? kL1Blocks : 1;
      if (is_l1 ? !l1_base_ok(h, c.bl) : !h.valid_block(c.bl)) {
        return Verdict::reject(RejectReason::BadArgument);
      }
      for (std::uint32_t b = c.bl; b < c.bl + n; ++b) {
        if (!h.in_guest(b)) return Verdict::reject(RejectReason::OutsideGuestMemory);
        if (acpt && !h.always_cacheable(b)) {
          return Verdict::reject(RejectReason::OutsideAlwaysCacheable);
        }
      }
      if (!all_typed(h, c.bl, n, PageType::Data)) return Verdict::reject(RejectReason::WrongType);
      for (std::uint32_t b = c.bl; b < c.bl + n; ++b) {
        if (h.refs[b].wt != 0 || h.refs[b].ptlink != 0) {
          return Verdict::reject(RejectReason::RefNonZero);
        }
      }
      const auto content = rd.read_range(block_base(Block{c.bl}), n * kWordsPerBlock);
      const Verdict v = is_l1 ? validate_l1(h, content, c.bl) : validate_l2(h, content, c.bl);
      if (!v.accepted) return v;
      if (auto mv = is_l1 ? ask_monitor(content, {}) : ask_monitor({}, content); !mv.accepted) {
        return mv;
      }
      RefDeltas deltas;
      for (Word w : content) {
        if (is_l1) {
          add_l1_entry_refs(deltas, w, +1);
        } else {
          add_l2_entry_refs(deltas, w, +1);
        }
      }
      if (!apply_ref_deltas(h, deltas)) return Verdict::reject(RejectReason::RefOverflow);
      for (std::uint32_t b = c.bl; b < c.bl + n; ++b) {
        h.pgtype[b] = is_l1 ? PageType::L1 : PageType::L2;
      }
      return Verdict::accept();
    }

    case HypercallKind::FreeL1:
    case HypercallKind::FreeL2: {
      const bool is_l1 = c.kind == HypercallKind::FreeL1;
      const std::uint32_t n = is_l1 ? kL1Blocks : 1;
      if (is_l1 ? !l1_base_ok(h, c.bl) : !h.valid_block(c.bl)) {
        return Verdict::reject(RejectReason::BadArgument);
      }
      const PageType want = is_l1 ? PageType::L1 : PageType::L2;
      if (!all_typed(h, c.bl, n, want)) return Verdict::reject(RejectReason::WrongType);
      if (is_l1 && m.coregs.mmu_enabled && m.coregs.ttbr0 == block_base(Block{c.bl})) {
        return Verdict::reject(RejectReason::PolicyViolation);
      }
      for (std::uint32_t b = c.bl; b < c.bl + n; ++b) {
        if (h.refs[b].wt != 0 || h.refs[b].ptlink != 0) {
          return Verdict::reject(RejectReason::RefNonZero);
        }
      }
      if (auto v = ask_monitor({}, {}); !v.accepted) return v;
      const auto content = rd.read_range(block_base(Block{c.bl}), n * kWordsPerBlock);
      RefDeltas deltas;
      for (Word w : content) {
        if (is_l1) {
          add_l1_entry_refs(deltas, w, -1, !h.faults.skip_link_refcount);
        } else {
          add_l2_entry_refs(deltas, w, -1);
        }
      }
      if (!apply_ref_deltas(h, deltas)) return Verdict::reject(RejectReason::RefOverflow);
      for (std::uint32_t b = c.bl; b < c.bl + n; ++b) h.pgtype[b] = PageType::Data;
      return Verdict::accept();
    }

    case HypercallKind::MapL1:
    case HypercallKind::LinkL1:
    case HypercallKind::UnmapL1: {
      if (!l1_base_ok(h, c.bl)) return Verdict::reject(RejectReason::BadArgument);
      if (!all_typed(h, c.bl, kL1Blocks, PageType::L1)) {
        return Verdict::reject(RejectReason::WrongType);
      }
      const std::uint32_t idx = c.idx & (kL1Entries - 1);
      const PhysAddr entry = block_base(Block{c.bl}) + idx * kWordBytes;
      const Word cur = rd.read(entry);
      RefDeltas deltas;
      Word next = 0;
      if (c.kind == HypercallKind::UnmapL1) {
        if (auto v = ask_monitor({}, {}); !v.accepted) return v;
        add_l1_entry_refs(deltas, cur, -1, !h.faults.skip_link_refcount);
      } else {
        if (decode_l1(cur).kind != L1Kind::Fault) return Verdict::reject(RejectReason::BadArgument);
        if (c.kind == HypercallKind::MapL1) {
          if ((c.target & ((1u << kSectionShift) - 1)) != 0) {
            return Verdict::reject(RejectReason::BadArgument);
          }
          next = encode_section(c.target, c.rights);
        } else {
          if ((c.target & 0x3FFu) != 0) return Verdict::reject(RejectReason::BadArgument);
          next = encode_page_table(c.target, c.rights.domain);
        }
        if (auto r = check_l1_entry(PolicyContext{h}, next)) return Verdict::reject(*r, idx);
        const Word one[1] = {next};
        if (auto v = ask_monitor(one, {}); !v.accepted) return v;
        add_l1_entry_refs(deltas, next, +1, !h.faults.skip_link_refcount);
      }
      if (!apply_ref_deltas(h, deltas)) return Verdict::reject(RejectReason::RefOverflow);
      if (next != cur) rd.write(entry, next);
      return Verdict::accept();
    }

    case HypercallKind::MapL2:
    case HypercallKind::UnmapL2: {
      if (!h.valid_block(c.bl)) return Verdict::reject(RejectReason::BadArgument);
      if (h.pgtype[c.bl] != PageType::L2) return Verdict::reject(RejectReason::WrongType);
      const std::uint32_t idx = c.idx & 0x3FFu;
      const PhysAddr entry = block_base(Block{c.bl}) + idx * kWordBytes;
      const Word cur = rd.read(entry);
      RefDeltas deltas;
      Word next = 0;
      if (c.kind == HypercallKind::UnmapL2) {
        if (auto v = ask_monitor({}, {}); !v.accepted) return v;
        add_l2_entry_refs(deltas, cur, -1);
      } else {
        if (decode_l2(cur).kind != L2Kind::Fault) return Verdict::reject(RejectReason::BadArgument);
        if ((c.target & (kBlockBytes - 1)) != 0) return Verdict::reject(RejectReason::BadArgument);
        next = encode_small(c.target, c.rights);
        if (auto r = check_l2_entry(PolicyContext{h}, next)) return Verdict::reject(*r, idx);
        const Word one[1] = {next};
        if (auto v = ask_monitor({}, one); !v.accepted) return v;
        add_l2_entry_refs(deltas, next, +1);
      }
      if (!apply_ref_deltas(h, deltas)) return Verdict::reject(RejectReason::RefOverflow);
      if (next != cur) rd.write(entry, next);
      return Verdict::accept();
    }
  }
  return Verdict::reject(RejectReason::BadArgument);
}

}  // namespace detail

/// Runs one hypercall handler atomically. A rejected request leaves page
/// types, counters and memory contents untouched; cache effects of the
/// handler's own reads and of the countermeasure entry action remain.
inline DispatchResult dmmu_dispatch(MachineState& m, HypState& h, const Hypercall& c,
                                    const MonitorHook& monitor = {}, bool record_reads = false) {
  DispatchResult out;
  out.trace.record_values = record_reads;
  h.cleaned_history.clear();
  if (h.countermeasure == Countermeasure::FullFlush) {
    m.cache.flush_all(m.mem);
    out.trace.flushed = true;
  }
  const HypState h_before = h;
  const CoprocConfig coregs_before = m.coregs;
  HypReader reader(m, h, out.trace);
  try {
    out.verdict = detail::run_handler(m, h, c, reader, monitor);
  } catch (const IncoherentInputError&) {
    out.verdict = Verdict::reject(RejectReason::IncoherentInput);
  }
  if (!out.verdict.accepted) {
    auto cleaned = std::move(h.cleaned_history);
    h = h_before;
    h.cleaned_history = std::move(cleaned);
    m.coregs = coregs_before;
  }
  return out;
}

}  // namespace aliasim
