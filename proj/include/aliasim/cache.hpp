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

// Generic set-associative, physically tagged, write-back / write-allocate
// data cache. Every set keeps its slice (tag -> line) and the sequence of
// internal actions performed on it; replacement decisions are a function of
// that history.

#include <algorithm>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "aliasim/phys_memory.hpp"
#include "aliasim/types.hpp"

namespace aliasim {

using Tag = std::uint32_t;

enum class Indexing : std::uint8_t { Physical, Virtual };
enum class ReplacementPolicy : std::uint8_t { Lru, Random };

struct CacheGeometry {
  std::uint32_t num_sets = 128;
  std::uint32_t ways = 4;
  std::uint32_t line_words = 16;  // 64-byte lines
  Indexing indexing = Indexing::Physical;
  ReplacementPolicy policy = ReplacementPolicy::Lru;

  void validate() const {
    if (!is_pow2(num_sets) || !is_pow2(ways) || !is_pow2(line_words)) {
      throw SimError("cache geometry must use powers of two");
    }
    if (line_bytes() > kBlockBytes) throw SimError("cache line larger than a block");
  }

  [[nodiscard]] std::uint32_t line_bytes() const { return line_words * kWordBytes; }
  [[nodiscard]] unsigned offset_bits() const { return log2u(line_bytes()); }
  [[nodiscard]] unsigned set_bits() const { return log2u(num_sets); }

  [[nodiscard]] std::uint32_t set_index(VirtAddr va, PhysAddr pa) const {
    const std::uint32_t a = indexing == Indexing::Physical ? pa.value : va.value;
    return (a >> offset_bits()) & (num_sets - 1);
  }
  /// Tag width is address bits - (N + L + alpha) when physically indexed and
  /// address bits - (L + alpha) when virtually indexed.
  [[nodiscard]] Tag tag(PhysAddr pa) const {
    return indexing == Indexing::Physical ? pa.value >> (offset_bits() + set_bits())
                                          : pa.value >> offset_bits();
  }
  [[nodiscard]] std::uint32_t word_index(PhysAddr pa) const {
    return (pa.value >> kWordShift) & (line_words - 1);
  }
  [[nodiscard]] PhysAddr line_base(std::uint32_t set, Tag t) const {
    if (indexing == Indexing::Physical) {
      return PhysAddr{(t << (offset_bits() + set_bits())) | (set << offset_bits())};
    }
    return PhysAddr{t << offset_bits()};
  }
  [[nodiscard]] PhysAddr line_base(PhysAddr pa) const {
    return PhysAddr{pa.value & ~(line_bytes() - 1)};
  }

  friend bool operator==(const CacheGeometry&, const CacheGeometry&) = default;
};

enum class ActionKind : std::uint8_t { TouchR, TouchW, Evict, Fill };

struct Action {
  ActionKind kind = ActionKind::TouchR;
  Tag tag = 0;

  friend bool operator==(const Action&, const Action&) = default;

  static constexpr Action touch_r(Tag t) { return {ActionKind::TouchR, t}; }
  static constexpr Action touch_w(Tag t) { return {ActionKind::TouchW, t}; }
  static constexpr Action evict(Tag t) { return {ActionKind::Evict, t}; }
  static constexpr Action fill(Tag t) { return {ActionKind::Fill, t}; }
};

using History = std::vector<Action>;

/// LRU decision queue; front is the most recently used tag.
using LruQueue = std::vector<Tag>;

namespace detail {

inline void queue_pop(LruQueue& q, Tag t) {
  if (auto it = std::find(q.begin(), q.end(), t); it != q.end()) q.erase(it);
}

inline void queue_push(LruQueue& q, Tag t) { q.insert(q.begin(), t); }

inline void queue_apply(LruQueue& q, const Action& a) {
  switch (a.kind) {
    case ActionKind::Evict: queue_pop(q, a.tag); break;
    case ActionKind::Fill: queue_push(q, a.tag); break;
    case ActionKind::TouchR:
    case ActionKind::TouchW:
      queue_pop(q, a.tag);
      queue_push(q, a.tag);
      break;
  }
}

}  // namespace detail

/// Replays a history into the LRU decision queue (the Cons recursion).
[[nodiscard]] inline LruQueue cons_queue(std::span<const Action> h) {
  LruQueue q;
  for (const auto& a : h) detail::queue_apply(q, a);
  return q;
}

/// Tags whose last recorded action is not an eviction.
[[nodiscard]] inline std::set<Tag> present_tags(std::span<const Action> h) {
  std::set<Tag> seen;
  std::set<Tag> present;
  for (auto it = h.rbegin(); it != h.rend(); ++it) {
    if (!seen.insert(it->tag).second) continue;
    if (it->kind != ActionKind::Evict) present.insert(it->tag);
  }
  return present;
}

/// LRU victim for a fill into a `ways`-way set: the back of the decision
/// queue, or nothing while the set still has room. The filled tag itself
/// does not influence the choice.
[[nodiscard]] inline std::optional<Tag> evict_select(std::span<const Action> h, Tag /*filled*/,
                                                     std::uint32_t ways) {
  const LruQueue q = cons_queue(h);
  if (q.size() < ways) return std::nullopt;
  return q.back();
}

/// Restricts `h` to the part LRU depends on: for each tag in `tags`, its
/// last fill and the touches after it. Evictions and other tags are dropped.
[[nodiscard]] inline History lru_filter(std::span<const Action> h, std::set<Tag> tags) {
  History kept;
  for (auto it = h.rbegin(); it != h.rend() && !tags.empty(); ++it) {
    const bool relevant = tags.count(it->tag) != 0;
    if (!relevant) continue;
    if (it->kind == ActionKind::TouchR || it->kind == ActionKind::TouchW) {
      kept.push_back(*it);
    } else if (it->kind == ActionKind::Fill) {
      kept.push_back(*it);
      tags.erase(it->tag);
    }
  }
  std::reverse(kept.begin(), kept.end());
  return kept;
}

[[nodiscard]] inline History lru_filter(std::span<const Action> h) {
  return lru_filter(h, present_tags(h));
}

struct CacheLine {
  std::vector<Word> data;
  bool dirty = false;

  friend bool operator==(const CacheLine&, const CacheLine&) = default;
};

struct CacheSet {
  std::vector<std::pair<Tag, CacheLine>> slice;
  History history;
  LruQueue lru;  // cons_queue(history), kept incrementally

  [[nodiscard]] const CacheLine* find(Tag t) const {
    for (const auto& [tag, line] : slice) {
      if (tag == t) return &line;
    }
    return nullptr;
  }
  [[nodiscard]] CacheLine* find(Tag t) {
    for (auto& [tag, line] : slice) {
      if (tag == t) return &line;
    }
    return nullptr;
  }
  [[nodiscard]] std::set<Tag> slice_tags() const {
    std::set<Tag> out;
    for (const auto& entry : slice) out.insert(entry.first);
    return out;
  }

  void record(const Action& a) {
    history.push_back(a);
    detail::queue_apply(lru, a);
  }
};

/// Where a physical address currently sits in the cache, if anywhere.
struct CacheHit {
  std::uint32_t set = 0;
  Tag tag = 0;
  const CacheLine* line = nullptr;
  std::uint32_t word = 0;

  [[nodiscard]] Word value() const { return line->data[word]; }
};

class Cache {
 public:
  Cache() : Cache(CacheGeometry{}) {}

  explicit Cache(CacheGeometry g, std::uint64_t seed = 0) : geom_(g), rng_(seed) {
    geom_.validate();
    auto empty = std::make_shared<CacheSet>();
    sets_.assign(geom_.num_sets, empty);
  }

  [[nodiscard]] const CacheGeometry& geometry() const { return geom_; }
  [[nodiscard]] const CacheSet& set(std::uint32_t i) const { return *sets_.at(i); }
  [[nodiscard]] std::uint32_t num_sets() const { return geom_.num_sets; }

  [[nodiscard]] bool shares_set(const Cache& other, std::uint32_t i) const {
    return sets_[i] == other.sets_[i];
  }

  /// Locates the line holding `pa`. Under virtual indexing a physical address
  /// may sit in any set, so all sets are scanned for its tag.
  [[nodiscard]] std::optional<CacheHit> lookup(PhysAddr pa) const {
    const Tag t = geom_.tag(pa);
    const std::uint32_t w = geom_.word_index(pa);
    if (geom_.indexing == Indexing::Physical) {
      const std::uint32_t i = geom_.set_index(VirtAddr{}, pa);
      if (const auto* line = sets_[i]->find(t)) return CacheHit{i, t, line, w};
      return std::nullopt;
    }
    for (std::uint32_t i = 0; i < geom_.num_sets; ++i) {
      if (const auto* line = sets_[i]->find(t)) return CacheHit{i, t, line, w};
    }
    return std::nullopt;
  }

  /// Core read: fill on miss (with conditional eviction, write-back of a
  /// dirty victim and alias eviction), then a read touch.
  Word read(PhysMemory& mem, VirtAddr va, PhysAddr pa) {
    const auto [i, t] = locate(va, pa);
    fill_wb(mem, va, pa);
    CacheSet& s = mut_set(i);
    s.record(Action::touch_r(t));
    return s.find(t)->data[geom_.word_index(pa)];
  }

  /// Core write: write-allocate, then update the word and mark the line dirty.
  void write(PhysMemory& mem, VirtAddr va, PhysAddr pa, Word v) {
    const auto [i, t] = locate(va, pa);
    fill_wb(mem, va, pa);
    CacheSet& s = mut_set(i);
    CacheLine* line = s.find(t);
    line->data[geom_.word_index(pa)] = v;
    line->dirty = true;
    s.record(Action::touch_w(t));
  }

  /// Writes back a dirty line and clears its dirty bit; the line stays.
  void clean(PhysMemory& mem, VirtAddr va, PhysAddr pa) {
    const auto [i, t] = locate(va, pa);
    const CacheLine* line = sets_[i]->find(t);
    if (line == nullptr || !line->dirty) return;
    CacheLine* ml = mut_set(i).find(t);
    write_back(mem, i, t, *ml);
    ml->dirty = false;
  }

  /// Evicts the line (writing it back if dirty).
  void invalidate(PhysMemory& mem, VirtAddr va, PhysAddr pa) {
    const auto [i, t] = locate(va, pa);
    if (sets_[i]->find(t) == nullptr) return;
    evict(mem, i, t);
  }

  /// Evicts every line with write-back and empties every history.
  void flush_all(PhysMemory& mem) {
    for (std::uint32_t i = 0; i < geom_.num_sets; ++i) {
      const CacheSet& s = *sets_[i];
      if (s.slice.empty() && s.history.empty()) continue;
      for (const auto& [tag, line] : s.slice) {
        if (line.dirty) write_back(mem, i, tag, line);
      }
      sets_[i] = std::make_shared<CacheSet>();
    }
  }

  /// Set and tag used for (va, pa) under the configured indexing.
  [[nodiscard]] std::pair<std::uint32_t, Tag> locate(VirtAddr va, PhysAddr pa) const {
    return {geom_.set_index(va, pa), geom_.tag(pa)};
  }

 private:
  CacheSet& mut_set(std::uint32_t i) {
    auto& p = sets_[i];
    if (p.use_count() > 1) p = std::make_shared<CacheSet>(*p);
    return *p;
  }

  void write_back(PhysMemory& mem, std::uint32_t set, Tag t, const CacheLine& line) {
    const PhysAddr base = geom_.line_base(set, t);
    for (std::uint32_t w = 0; w < geom_.line_words; ++w) {
      mem.write(base + w * kWordBytes, line.data[w]);
    }
  }

  void evict(PhysMemory& mem, std::uint32_t i, Tag t) {
    CacheSet& s = mut_set(i);
    auto it = std::find_if(s.slice.begin(), s.slice.end(),
                           [t](const auto& e) { return e.first == t; });
    if (it->second.dirty) write_back(mem, i, t, it->second);
    s.slice.erase(it);
    s.record(Action::evict(t));
  }

  std::optional<Tag> choose_victim(std::uint32_t i, Tag t) {
    const CacheSet& s = *sets_[i];
    if (s.slice.size() < geom_.ways) return std::nullopt;
    if (geom_.policy == ReplacementPolicy::Random) {
      return s.slice[next_random() % s.slice.size()].first;
    }
    (void)t;
    return s.lru.back();
  }

  void fill_wb(PhysMemory& mem, VirtAddr va, PhysAddr pa) {
    const auto [i, t] = locate(va, pa);
    if (sets_[i]->find(t) != nullptr) return;
    if (auto victim = choose_victim(i, t)) evict(mem, i, *victim);
    if (geom_.indexing == Indexing::Virtual) {
      for (std::uint32_t j = 0; j < geom_.num_sets; ++j) {
        if (j != i && sets_[j]->find(t) != nullptr) evict(mem, j, t);
      }
    }
    // Filled from memory after any write-back above, so a dirty alias that
    // was just evicted is not lost.
    CacheLine line;
    line.data.resize(geom_.line_words);
    const PhysAddr base = geom_.line_base(pa);
    for (std::uint32_t w = 0; w < geom_.line_words; ++w) {
      line.data[w] = mem.read(base + w * kWordBytes);
    }
    CacheSet& s = mut_set(i);
    s.slice.emplace_back(t, std::move(line));
    s.record(Action::fill(t));
  }

  std::uint64_t next_random() {
    // splitmix64
    std::uint64_t z = (rng_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  CacheGeometry geom_;
  std::uint64_t rng_ = 0;
  std::vector<std::shared_ptr<CacheSet>> sets_;
};

}  // namespace aliasim
