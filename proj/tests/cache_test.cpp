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


#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>

#include "aliasim/cache.hpp"
#include "aliasim/phys_memory.hpp"

namespace aliasim {
namespace {

// Reference LRU set: per-line last-use stamps, victim is the smallest stamp.
struct RefSet {
  std::map<Tag, std::uint64_t> stamp;
  std::uint64_t now = 0;
};

CacheGeometry small_geometry(std::uint32_t ways) {
  CacheGeometry g;
  g.num_sets = 4;
  g.ways = ways;
  g.line_words = 4;
  return g;
}

TEST(ConsQueue, HandComputedExamples) {
  const History h = {Action::fill(1), Action::fill(2), Action::touch_r(1), Action::fill(3)};
  EXPECT_EQ(cons_queue(h), (LruQueue{3, 1, 2}));
  const History h2 = {Action::fill(1), Action::fill(2), Action::evict(1), Action::fill(4),
                      Action::touch_w(2)};
  EXPECT_EQ(cons_queue(h2), (LruQueue{2, 4}));
  EXPECT_TRUE(cons_queue(History{}).empty());
}

TEST(ConsQueue, EvictSelectWaitsForAFullSet) {
  const History h = {Action::fill(1), Action::fill(2), Action::touch_r(1)};
  EXPECT_FALSE(evict_select(h, 9, 4).has_value());
  EXPECT_EQ(evict_select(h, 9, 2), std::optional<Tag>(2));
}

TEST(LruFilter, KeepsLastFillAndLaterTouches) {
  const History h = {Action::fill(1), Action::touch_r(1), Action::fill(2), Action::evict(1),
                     Action::fill(1), Action::touch_w(2), Action::touch_r(1)};
  const History expect = {Action::fill(2), Action::fill(1), Action::touch_w(2),
                          Action::touch_r(1)};
  EXPECT_EQ(lru_filter(h), expect);
  EXPECT_EQ(cons_queue(h), cons_queue(lru_filter(h)));
}

TEST(PresentTags, FollowsTheLastAction) {
  const History h = {Action::fill(1), Action::fill(2), Action::evict(1), Action::touch_r(2)};
  EXPECT_EQ(present_tags(h), (std::set<Tag>{2}));
}

TEST(CacheLru, MatchesStampReferenceOnRandomTraffic) {
  for (std::uint32_t ways : {1u, 2u, 4u}) {
    const CacheGeometry g = small_geometry(ways);
    PhysMemory mem(16 * kBlockBytes);
    Cache c(g);
    std::vector<RefSet> ref(g.num_sets);
    std::mt19937 rng(ways);
    for (int k = 0; k < 4000; ++k) {
      const std::uint32_t line = rng() % 64;
      const PhysAddr pa{line * g.line_bytes()};
      const std::uint32_t set = g.set_index(VirtAddr{pa.value}, pa);
      const Tag t = g.tag(pa);
      RefSet& r = ref[set];
      if (!r.stamp.count(t) && r.stamp.size() == ways) {
        auto victim = std::min_element(r.stamp.begin(), r.stamp.end(),
                                       [](auto& a, auto& b) { return a.second < b.second; });
        r.stamp.erase(victim);
      }
      r.stamp[t] = ++r.now;
      if (rng() & 1) {
        c.write(mem, VirtAddr{pa.value}, pa, k);
      } else {
        c.read(mem, VirtAddr{pa.value}, pa);
      }
      std::set<Tag> expect;
      for (auto& [tag, st] : r.stamp) expect.insert(tag);
      ASSERT_EQ(c.set(set).slice_tags(), expect) << "ways=" << ways << " step " << k;
    }
  }
}

TEST(CacheWriteBack, DirtyLineReachesMemoryOnlyOnEviction) {
  const CacheGeometry g = small_geometry(1);
  PhysMemory mem(16 * kBlockBytes);
  Cache c(g);
  const PhysAddr a{0};
  const PhysAddr b{g.num_sets * g.line_bytes()};  // same set, other tag
  c.write(mem, VirtAddr{a.value}, a, 7);
  EXPECT_EQ(mem.read(a), 0u);
  EXPECT_EQ(c.lookup(a)->value(), 7u);
  c.read(mem, VirtAddr{b.value}, b);
  EXPECT_EQ(mem.read(a), 7u);
  EXPECT_FALSE(c.lookup(a).has_value());
}

TEST(CacheWriteBack, CleanLineKeepsStaleValue) {
  const CacheGeometry g = small_geometry(2);
  PhysMemory mem(16 * kBlockBytes);
  Cache c(g);
  const PhysAddr a{64};
  mem.write(a, 1);
  EXPECT_EQ(c.read(mem, VirtAddr{a.value}, a), 1u);
  mem.write(a, 2);  // behind the cache
  EXPECT_EQ(c.read(mem, VirtAddr{a.value}, a), 1u);
  c.invalidate(mem, VirtAddr{a.value}, a);
  EXPECT_EQ(c.read(mem, VirtAddr{a.value}, a), 2u);
}

TEST(CacheMaintenance, CleanWritesBackAndKeepsTheLine) {
  const CacheGeometry g = small_geometry(2);
  PhysMemory mem(16 * kBlockBytes);
  Cache c(g);
  const PhysAddr a{128};
  c.write(mem, VirtAddr{a.value}, a, 5);
  c.clean(mem, VirtAddr{a.value}, a);
  EXPECT_EQ(mem.read(a), 5u);
  ASSERT_TRUE(c.lookup(a).has_value());
  EXPECT_FALSE(c.lookup(a)->line->dirty);
  c.flush_all(mem);
  EXPECT_FALSE(c.lookup(a).has_value());
  EXPECT_TRUE(c.set(g.set_index(VirtAddr{a.value}, a)).history.empty());
}

TEST(CacheVirtualIndexing, AliasesNeverCoexist) {
  CacheGeometry g = small_geometry(2);
  g.indexing = Indexing::Virtual;
  PhysMemory mem(16 * kBlockBytes);
  Cache c(g);
  const PhysAddr pa{0x40};
  const VirtAddr v1{0x40};
  const VirtAddr v2{0x40 + g.line_bytes()};  // different set, same physical line
  c.write(mem, v1, pa, 9);
  EXPECT_EQ(c.read(mem, v2, pa), 9u);
  int copies = 0;
  for (std::uint32_t i = 0; i < g.num_sets; ++i) copies += c.set(i).find(g.tag(pa)) != nullptr;
  EXPECT_EQ(copies, 1);
}

TEST(CacheCopy, CopiesShareUntouchedSets) {
  const CacheGeometry g = small_geometry(2);
  PhysMemory mem(16 * kBlockBytes);
  Cache c(g);
  c.read(mem, VirtAddr{0}, PhysAddr{0});
  Cache d = c;
  d.write(mem, VirtAddr{0}, PhysAddr{0}, 1);
  EXPECT_FALSE(c.shares_set(d, 0));
  EXPECT_TRUE(c.shares_set(d, 1));
  EXPECT_EQ(c.lookup(PhysAddr{0})->value(), 0u);
}

TEST(CacheGeometryTest, RejectsNonPowersOfTwo) {
  CacheGeometry g;
  g.num_sets = 96;
  EXPECT_THROW(g.validate(), SimError);
}

TEST(CacheRandomPolicy, IsDeterministicPerSeed) {
  CacheGeometry g = small_geometry(4);
  g.policy = ReplacementPolicy::Random;
  auto run = [&](std::uint64_t seed) {
    PhysMemory mem(16 * kBlockBytes);
    Cache c(g, seed);
    for (std::uint32_t k = 0; k < 200; ++k) {
      const PhysAddr pa{(k * 7919 % 64) * g.line_bytes()};
      c.read(mem, VirtAddr{pa.value}, pa);
    }
    return c.set(0).slice_tags();
  };
  EXPECT_EQ(run(3), run(3));
}

}  // namespace
}  // namespace aliasim
