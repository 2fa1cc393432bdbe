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

// Alias-driven cache attacks: the storage-channel probe, AES last-round key
// recovery from eviction logs, and the page-table integrity attack on the
// direct-paging hypervisor.

#include <algorithm>
#include <array>
#include <bit>
#include <bitset>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "aliasim/aes.hpp"
#include "aliasim/system.hpp"

namespace aliasim {

// ---------------------------------------------------------------------------
// Prime and probe

enum class ProbeStrategy : std::uint8_t {
  EvictionRobust,     // keep a clean 0 in the cache over a 1 in memory
  WriteBackInertia,   // keep a dirty 1 in the cache over a 0 in memory
};

/// Probe buffer: one line per (set, way), mapped through a cacheable
/// identity address and its uncacheable alias.
struct ProbeConfig {
  std::vector<std::uint32_t> target_sets;
  std::uint32_t buffer_pa = 0x00300000;
  ProbeStrategy strategy = ProbeStrategy::EvictionRobust;
  std::uint32_t max_prime_rounds = 64;

  static ProbeConfig all_sets(const CacheGeometry& g) {
    ProbeConfig c;
    for (std::uint32_t i = 0; i < g.num_sets; ++i) c.target_sets.push_back(i);
    return c;
  }

  [[nodiscard]] std::uint32_t pa(const CacheGeometry& g, std::uint32_t set,
                                 std::uint32_t way) const {
    return buffer_pa + (way * g.num_sets + set) * g.line_bytes();
  }
  [[nodiscard]] std::uint32_t va_c(const CacheGeometry& g, std::uint32_t set,
                                   std::uint32_t way) const {
    return pa(g, set, way);
  }
  [[nodiscard]] std::uint32_t va_nc(const CacheGeometry& g, std::uint32_t set,
                                    std::uint32_t way) const {
    return Layout::uncached_alias(pa(g, set, way));
  }
};

using SetWay = std::pair<std::uint32_t, std::uint32_t>;

namespace detail {

/// The attacker is the guest kernel: it may use cache maintenance.
struct AsPrivileged {
  explicit AsPrivileged(System& s) : sys(s), saved(s.m.mode) { s.m.mode = Mode::Privileged; }
  ~AsPrivileged() { sys.m.mode = saved; }
  AsPrivileged(const AsPrivileged&) = delete;
  AsPrivileged& operator=(const AsPrivileged&) = delete;
  System& sys;
  Mode saved;
};

inline Word must_read(System& s, std::uint32_t va) {
  const StepResult r = s.step(GuestOp::read(va));
  if (r.kind != StepKind::Value) throw SimError("probe buffer is not mapped");
  return r.value;
}

inline void must_step(System& s, const GuestOp& op) {
  if (s.step(op).kind != StepKind::Done) throw SimError("probe buffer is not mapped");
}

inline void prime_line(System& s, const ProbeConfig& cfg, std::uint32_t set, std::uint32_t way) {
  const auto& g = s.m.cache.geometry();
  const std::uint32_t c = cfg.va_c(g, set, way);
  const std::uint32_t nc = cfg.va_nc(g, set, way);
  if (cfg.strategy == ProbeStrategy::EvictionRobust) {
    must_step(s, GuestOp::invalidate(c));
    must_step(s, GuestOp::write(nc, 0));
    must_read(s, c);
    must_step(s, GuestOp::write(nc, 1));
  } else {
    must_step(s, GuestOp::write(c, 1));
    must_step(s, GuestOp::write(nc, 0));
  }
}

}  // namespace detail

/// Fills every way of the target sets with probe lines whose cached value
/// differs from memory, re-priming lines until a pass finds all of them
/// still resident.
inline void prime(System& s, const ProbeConfig& cfg) {
  detail::AsPrivileged priv(s);
  const auto& g = s.m.cache.geometry();
  for (std::uint32_t set : cfg.target_sets) {
    for (std::uint32_t w = 0; w < g.ways; ++w) detail::prime_line(s, cfg, set, w);
  }
  for (std::uint32_t round = 0; round < cfg.max_prime_rounds; ++round) {
    bool all_resident = true;
    for (std::uint32_t set : cfg.target_sets) {
      for (std::uint32_t w = 0; w < g.ways; ++w) {
        const bool resident = cfg.strategy == ProbeStrategy::EvictionRobust
                                  ? detail::must_read(s, cfg.va_c(g, set, w)) == 0
                                  : detail::must_read(s, cfg.va_nc(g, set, w)) == 0;
        if (!resident) {
          all_resident = false;
          detail::prime_line(s, cfg, set, w);
        }
      }
    }
    if (all_resident) return;
  }
}

/// Reads back every probe line; a changed value means the victim evicted
/// it. Ways are read most-recently-primed first so that refilling an
/// evicted line does not push out a probe line that is still unread.
[[nodiscard]] inline std::vector<SetWay> probe(System& s, const ProbeConfig& cfg) {
  detail::AsPrivileged priv(s);
  const auto& g = s.m.cache.geometry();
  std::vector<SetWay> evicted;
  for (std::uint32_t set : cfg.target_sets) {
    for (std::uint32_t w = g.ways; w-- > 0;) {
      const Word v = cfg.strategy == ProbeStrategy::EvictionRobust
                         ? detail::must_read(s, cfg.va_c(g, set, w))
                         : detail::must_read(s, cfg.va_nc(g, set, w));
      if (v == 1) evicted.emplace_back(set, w);
    }
  }
  std::sort(evicted.begin(), evicted.end());
  return evicted;
}

// ---------------------------------------------------------------------------
// Eviction logs

struct LogEntry {
  AesBlock ciphertext{};
  std::vector<SetWay> evicted;

  friend bool operator==(const LogEntry&, const LogEntry&) = default;
};

struct EvictionLog {
  std::vector<LogEntry> entries;

  friend bool operator==(const EvictionLog&, const EvictionLog&) = default;
};

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (auto b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 15]);
  }
  return out;
}

inline std::optional<AesBlock> parse_hex16(const std::string& s) {
  if (s.size() != 32) return std::nullopt;
  AesBlock out{};
  for (std::size_t i = 0; i < 16; ++i) {
    unsigned v = 0;
    if (std::sscanf(s.c_str() + 2 * i, "%2x", &v) != 1) return std::nullopt;
    out[i] = static_cast<std::uint8_t>(v);
  }
  return out;
}

/// One record per line: the ciphertext in hex followed by `set:way` tokens.
inline void write_log(std::ostream& os, const EvictionLog& log) {
  for (const auto& e : log.entries) {
    os << to_hex(e.ciphertext);
    for (const auto& [set, way] : e.evicted) os << ' ' << set << ':' << way;
    os << '\n';
  }
}

inline EvictionLog read_log(std::istream& is) {
  EvictionLog log;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string hex;
    ls >> hex;
    auto ct = parse_hex16(hex);
    if (!ct) throw SimError("bad ciphertext in eviction log: " + hex);
    LogEntry e;
    e.ciphertext = *ct;
    std::string tok;
    while (ls >> tok) {
      const auto colon = tok.find(':');
      const std::uint32_t set = static_cast<std::uint32_t>(std::stoul(tok.substr(0, colon)));
      const std::uint32_t way =
          colon == std::string::npos ? 0 : static_cast<std::uint32_t>(std::stoul(tok.substr(colon + 1)));
      e.evicted.emplace_back(set, way);
    }
    log.entries.push_back(std::move(e));
  }
  return log;
}

// ---------------------------------------------------------------------------
// Key recovery

/// Set of byte values, with the xor-translation used by the pairwise
/// constraint.
class ByteSet {
 public:
  void set(unsigned v) { w_[v >> 6] |= 1ull << (v & 63); }
  [[nodiscard]] bool test(unsigned v) const { return (w_[v >> 6] >> (v & 63)) & 1u; }
  [[nodiscard]] unsigned count() const {
    unsigned n = 0;
    for (auto w : w_) n += static_cast<unsigned>(std::popcount(w));
    return n;
  }
  [[nodiscard]] unsigned first() const {
    for (unsigned i = 0; i < 4; ++i) {
      if (w_[i] != 0) return i * 64 + static_cast<unsigned>(std::countr_zero(w_[i]));
    }
    return 256;
  }
  ByteSet& operator&=(const ByteSet& o) {
    for (int i = 0; i < 4; ++i) w_[i] &= o.w_[i];
    return *this;
  }
  friend bool operator==(const ByteSet&, const ByteSet&) = default;

  /// {x ^ d | x in this}
  [[nodiscard]] ByteSet xored(unsigned d) const {
    static constexpr std::uint64_t kMask[6] = {
        0x5555555555555555ull, 0x3333333333333333ull, 0x0F0F0F0F0F0F0F0Full,
        0x00FF00FF00FF00FFull, 0x0000FFFF0000FFFFull, 0x00000000FFFFFFFFull};
    ByteSet r = *this;
    for (unsigned k = 0; k < 6; ++k) {
      if (((d >> k) & 1u) == 0) continue;
      const unsigned sh = 1u << k;
      for (auto& w : r.w_) w = ((w & kMask[k]) << sh) | ((w >> sh) & kMask[k]);
    }
    if (d & 64u) {
      std::swap(r.w_[0], r.w_[1]);
      std::swap(r.w_[2], r.w_[3]);
    }
    if (d & 128u) {
      std::swap(r.w_[0], r.w_[2]);
      std::swap(r.w_[1], r.w_[3]);
    }
    return r;
  }

 private:
  std::array<std::uint64_t, 4> w_{};
};

struct RecoveryOptions {
  double noise_threshold = 0.9;  // lines evicted in at least this share of entries are ignored
  bool noise_filter = true;
};

struct RecoveryResult {
  bool ok = false;
  AesBlock round_key{};
  std::vector<unsigned> insufficient;  // byte positions without a unique candidate
  std::array<unsigned, 16> candidates{};
  std::set<std::uint32_t> noisy_sets;
};

/// Non-elimination analysis of an eviction log: intersect the evicted lines
/// of all entries sharing a ciphertext byte, map the surviving lines to the
/// S-box outputs they hold, and narrow candidates with the constraint
/// v ^ v' = t ^ t' between values observed at the same position.
[[nodiscard]] inline RecoveryResult recover_last_round_key(
    const EvictionLog& log, const std::map<std::uint32_t, std::vector<std::uint8_t>>& t4_layout,
    const RecoveryOptions& opt = {}) {
  RecoveryResult res;
  constexpr std::size_t kMaxSets = 4096;
  using Lines = std::bitset<kMaxSets>;
  const std::size_t n = log.entries.size();
  if (n == 0) {
    for (unsigned j = 0; j < 16; ++j) res.insufficient.push_back(j);
    return res;
  }

  std::vector<Lines> ev(n);
  std::vector<std::size_t> hits(kMaxSets, 0);
  for (std::size_t l = 0; l < n; ++l) {
    for (const auto& sw : log.entries[l].evicted) {
      if (sw.first >= kMaxSets) throw SimError("set index too large for the analyzer");
      if (!ev[l].test(sw.first)) ++hits[sw.first];
      ev[l].set(sw.first);
    }
  }
  Lines keep;
  keep.set();
  if (opt.noise_filter) {
    for (std::size_t s = 0; s < kMaxSets; ++s) {
      if (hits[s] > 0 && static_cast<double>(hits[s]) >= opt.noise_threshold * static_cast<double>(n)) {
        keep.reset(s);
        res.noisy_sets.insert(static_cast<std::uint32_t>(s));
      }
    }
  }

  for (unsigned j = 0; j < 16; ++j) {
    std::array<std::optional<Lines>, 256> e;
    for (std::size_t l = 0; l < n; ++l) {
      const unsigned v = log.entries[l].ciphertext[j];
      const Lines masked = ev[l] & keep;
      e[v] = e[v] ? (*e[v] & masked) : masked;
    }
    std::array<std::optional<ByteSet>, 256> t4;
    for (unsigned v = 0; v < 256; ++v) {
      if (!e[v]) continue;
      ByteSet bs;
      for (const auto& [set, values] : t4_layout) {
        if (set < kMaxSets && e[v]->test(set)) {
          for (auto t : values) bs.set(t);
        }
      }
      t4[v] = bs;
    }
    bool changed = true;
    while (changed) {
      changed = false;
      for (unsigned v = 0; v < 256; ++v) {
        if (!t4[v] || t4[v]->count() == 0) continue;
        for (unsigned v2 = 0; v2 < 256; ++v2) {
          if (v2 == v || !t4[v2] || t4[v2]->count() == 0) continue;
          const ByteSet before = *t4[v];
          *t4[v] &= t4[v2]->xored(v ^ v2);
          if (!(before == *t4[v])) changed = true;
        }
      }
    }
    // Key candidates: every observed value must agree on v ^ t.
    ByteSet keys;
    for (unsigned k = 0; k < 256; ++k) keys.set(k);
    for (unsigned v = 0; v < 256; ++v) {
      if (t4[v]) keys &= t4[v]->xored(v);
    }
    res.candidates[j] = keys.count();
    std::optional<unsigned> key;
    if (keys.count() == 1) key = keys.first();
    if (key) {
      res.round_key[j] = static_cast<std::uint8_t>(*key);
    } else {
      res.insufficient.push_back(j);
    }
  }
  res.ok = res.insufficient.empty();
  return res;
}

// ---------------------------------------------------------------------------
// AES extraction experiment

struct AesAttackConfig {
  SystemConfig system{};
  AesLayout layout{};
  std::optional<ProbeConfig> probe;  // defaults to every set
  RecoveryOptions recovery{};
};

/// A booted system with an AES victim holding a secret key, and the
/// attacker's measurement loop around it.
class AesExperiment {
 public:
  AesExperiment(const AesAttackConfig& cfg, const AesKey& key)
      : cfg_(cfg), sys_(System::boot(cfg.system)) {
    probe_ = cfg.probe ? *cfg.probe : ProbeConfig::all_sets(sys_.m.cache.geometry());
    install_aes_victim(sys_.m, cfg.layout, key);
  }

  [[nodiscard]] System& system() { return sys_; }
  [[nodiscard]] const ProbeConfig& probe_config() const { return probe_; }
  [[nodiscard]] const AesAttackConfig& config() const { return cfg_; }

  /// The victim service: entered like a hypercall, so the full-flush
  /// countermeasure cleans the cache first.
  AesBlock run_victim(const AesBlock& pt, AesTrace* trace = nullptr) {
    if (sys_.h.countermeasure == Countermeasure::FullFlush) sys_.m.cache.flush_all(sys_.m.mem);
    return aes_encrypt_logged(sys_.m, cfg_.layout, pt, trace);
  }

  LogEntry measure(const AesBlock& pt) {
    prime(sys_, probe_);
    LogEntry e;
    e.ciphertext = run_victim(pt);
    e.evicted = probe(sys_, probe_);
    return e;
  }

  /// Appends `n` measurements of random plaintexts.
  void collect(EvictionLog& log, std::size_t n, std::mt19937_64& rng) {
    for (std::size_t i = 0; i < n; ++i) {
      AesBlock pt{};
      for (auto& b : pt) b = static_cast<std::uint8_t>(rng());
      log.entries.push_back(measure(pt));
    }
  }

  [[nodiscard]] std::map<std::uint32_t, std::vector<std::uint8_t>> t4_layout() const {
    return cfg_.layout.t4_layout(sys_.m.cache.geometry());
  }

 private:
  AesAttackConfig cfg_;
  System sys_;
  ProbeConfig probe_;
};

[[nodiscard]] inline EvictionLog collect_log(const AesAttackConfig& cfg, const AesKey& key,
                                             std::size_t n, std::mt19937_64& rng) {
  AesExperiment ex(cfg, key);
  EvictionLog log;
  ex.collect(log, n, rng);
  return log;
}

struct KeyExtraction {
  bool recovered = false;
  AesKey key{};
  std::size_t encryptions = 0;
  RecoveryResult last;
};

/// Collects measurements in batches until every key byte is determined or
/// `max_encryptions` is reached, then inverts the key schedule.
[[nodiscard]] inline KeyExtraction extract_key(const AesAttackConfig& cfg, const AesKey& secret,
                                               std::size_t max_encryptions, std::size_t batch,
                                               std::mt19937_64& rng) {
  AesExperiment ex(cfg, secret);
  const auto layout = ex.t4_layout();
  EvictionLog log;
  KeyExtraction out;
  // A chosen plaintext and its ciphertext confirm a candidate key.
  AesBlock known_pt{};
  for (auto& b : known_pt) b = static_cast<std::uint8_t>(rng());
  const AesBlock known_ct = ex.run_victim(known_pt);
  while (log.entries.size() < max_encryptions) {
    ex.collect(log, std::min(batch, max_encryptions - log.entries.size()), rng);
    out.last = recover_last_round_key(log, layout, cfg.recovery);
    if (out.last.ok) {
      const AesKey key = invert_key_schedule(out.last.round_key);
      if (aes_encrypt_reference(key, known_pt) != known_ct) continue;
      out.recovered = true;
      out.key = key;
      break;
    }
  }
  out.encryptions = log.entries.size();
  return out;
}

// ---------------------------------------------------------------------------
// Integrity attack on direct paging

struct AttackStep {
  std::string label;
  Verdict verdict;
};

struct AttackOutcome {
  bool bypassed = false;          // the MMU walks a table that fails validation
  bool monitor_detected = false;  // some request of the attack was rejected
  bool final_integrity = true;
  std::optional<RejectReason> blocked_by;
  std::vector<AttackStep> steps;
};

inline constexpr std::uint32_t kAttackPayload = 0x0BADC0DE;

/// Builds a page table the guest may not have: the page-table section
/// becomes user-writable and a data section becomes writable and executable.
[[nodiscard]] inline std::vector<Word> malicious_l1(const Layout& lay) {
  std::vector<Word> l1 = lay.boot_l1();
  l1[Layout::kPtMb] = encode_section(Layout::mb_base(Layout::kPtMb), MapRights::user_rw(true));
  MapRights rwx = MapRights::user_rw(true);
  rwx.xn = false;
  l1[Layout::kFirstDataMb] = encode_section(Layout::mb_base(Layout::kFirstDataMb), rwx);
  return l1;
}

/// Runs the attack: get a valid image of a new L1 cached by the hypervisor
/// (create, then free), overwrite memory behind the cache through an
/// uncacheable alias, ask for creation again, evict the stale clean lines
/// and switch to the table.
[[nodiscard]] inline AttackOutcome run_integrity_attack(const SystemConfig& cfg) {
  System s = System::boot(cfg);
  const Layout& lay = s.layout;
  const auto& g = s.m.cache.geometry();
  AttackOutcome out;
  const std::uint32_t target = lay.pool_block(0);
  const std::uint32_t l2 = Layout::kL2Block;

  auto call = [&](const std::string& label, const Hypercall& c) {
    const Verdict v = s.call(c);
    out.steps.push_back({label, v});
    if (!v.accepted && !out.blocked_by) out.blocked_by = v.reason;
    return v;
  };
  auto map_target = [&] {
    for (std::uint32_t k = 0; k < kL1Blocks; ++k) {
      call("map-uncached", Hypercall::map_l2(l2, k, (target + k) << kBlockShift,
                                             MapRights::user_rw(false)));
    }
  };
  auto unmap_target = [&] {
    for (std::uint32_t k = 0; k < kL1Blocks; ++k) call("unmap", Hypercall::unmap_l2(l2, k));
  };
  auto write_image = [&](const std::vector<Word>& image, const std::vector<Word>* only_diff) {
    for (std::uint32_t i = 0; i < kL1Entries; ++i) {
      if (only_diff != nullptr ? image[i] == (*only_diff)[i] : image[i] == 0) continue;
      s.step(GuestOp::write(Layout::l2_slot_va(0) + i * kWordBytes, image[i]));
    }
  };

  // Unsigned payload in a data page the malicious table will make executable.
  s.step(GuestOp::write(Layout::mb_base(Layout::kFirstDataMb), kAttackPayload));

  const std::vector<Word> good = lay.boot_l1();
  const std::vector<Word> evil = malicious_l1(lay);
  map_target();
  write_image(good, nullptr);
  unmap_target();
  call("create-valid", Hypercall::create_l1(target));
  call("free", Hypercall::free_l1(target));
  map_target();
  write_image(evil, &good);
  unmap_target();
  out.blocked_by.reset();
  const Verdict created = call("create-stale", Hypercall::create_l1(target));

  // Sweep the cache with guest data so the clean stale lines are dropped.
  const std::uint32_t sweep = Layout::mb_base(Layout::kFirstDataMb + 1);
  const std::uint32_t sweep_bytes = g.num_sets * g.ways * g.line_bytes();
  for (std::uint32_t off = 0; off < sweep_bytes; off += g.line_bytes()) {
    s.step(GuestOp::read(sweep + off));
  }
  const Verdict switched = call("switch", Hypercall::switch_to(target));

  if (created.accepted && switched.accepted) {
    std::vector<Word> seen(kL1Entries);
    for (std::uint32_t i = 0; i < kL1Entries; ++i) {
      seen[i] = core_view(s.m, PhysAddr{s.m.coregs.ttbr0.value + i * kWordBytes});
    }
    out.bypassed = !validate_l1(s.h, seen).accepted;
  }
  out.monitor_detected = !created.accepted || !switched.accepted;
  out.final_integrity = integrity(s.gi, s.m);
  return out;
}

}  // namespace aliasim
