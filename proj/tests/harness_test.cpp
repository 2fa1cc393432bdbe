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

#include <vector>

#include "aliasim/harness.hpp"

namespace aliasim {
namespace {

constexpr PhysAddr kData{0x00300040};
constexpr PhysAddr kCode{0x00200100};

System boot(Countermeasure cm = Countermeasure::None) {
  SystemConfig c;
  c.mem_mb = 8;
  c.countermeasure = cm;
  return System::boot(c);
}

TEST(Derivability, UnchangedStateIsDerivable) {
  const System s = boot();
  const auto w = check_derivability(s.m, s.m);
  EXPECT_TRUE(w.ok());
  EXPECT_TRUE(w.addresses.empty());
}

TEST(Derivability, CachedWriteToWritableDataUsesTheWriteClause) {
  const System pre = boot();
  System post = pre;
  post.m.cache.write(post.m.mem, VirtAddr{kData.value}, kData, 42);
  const auto w = check_derivability(pre.m, post.m);
  ASSERT_TRUE(w.ok()) << w.describe();
  ASSERT_FALSE(w.addresses.empty());
  for (const auto& a : w.addresses) {
    EXPECT_NE(a.clause, DerivClause::Violated);
  }
}

TEST(Derivability, CleanFillOfReadableDataIsDerivable) {
  const System pre = boot();
  System post = pre;
  post.m.cache.read(post.m.mem, VirtAddr{kCode.value}, kCode);
  const auto w = check_derivability(pre.m, post.m);
  EXPECT_TRUE(w.ok()) << w.describe();
}

TEST(Derivability, WriteBehindCleanLineThroughUncachedAlias) {
  System pre = boot();
  pre.m.cache.read(pre.m.mem, VirtAddr{kData.value}, kData);
  System post = pre;
  post.m.mem.write(kData, 7);
  EXPECT_TRUE(check_derivability(pre.m, post.m).ok());
}

// Transitions that no guest instruction can produce.
TEST(Derivability, CoprocessorChangeIsRejected) {
  const System pre = boot();
  System post = pre;
  post.m.coregs.dacr = 0x3;
  const auto w = check_derivability(pre.m, post.m);
  EXPECT_FALSE(w.ok());
  EXPECT_FALSE(w.coregs_equal);
}

TEST(Derivability, WriteToCodeIsRejected) {
  const System pre = boot();
  System post = pre;
  post.m.mem.write(kCode, 1);
  const auto w = check_derivability(pre.m, post.m);
  ASSERT_FALSE(w.ok());
  EXPECT_EQ(*w.first_violation, kCode);
}

TEST(Derivability, WriteToHypervisorMemoryIsRejected) {
  const System pre = boot();
  System post = pre;
  post.m.cache.write(post.m.mem, VirtAddr{0x80}, PhysAddr{0x80}, 9);
  EXPECT_FALSE(check_derivability(pre.m, post.m).ok());
}

TEST(Derivability, FillOfUnreadableMemoryIsRejected) {
  const System pre = boot();
  System post = pre;
  post.m.cache.read(post.m.mem, VirtAddr{0x80}, PhysAddr{0x80});
  EXPECT_FALSE(check_derivability(pre.m, post.m).ok());
}

TEST(Invariant, DetectsCorruptedCountersAndTables) {
  System s = boot();
  EXPECT_FALSE(invariant_violation(s).has_value());
  System a = s;
  a.h.refs[0x300].wt += 1;
  EXPECT_TRUE(invariant_violation(a).has_value());
  System b = s;
  b.m.mem.write(PhysAddr{Layout::kL1Base},
                encode_section(0, MapRights::user_rw(true)));
  EXPECT_TRUE(invariant_violation(b).has_value());
  System c = s;
  c.m.coregs.ttbr0 = PhysAddr{0x00300000};
  EXPECT_TRUE(invariant_violation(c).has_value());
}

TEST(Recount, EmptyHypervisorStateHasNoReferences) {
  MachineState m(8u << 20, CacheGeometry{});
  HypState h(m.mem.num_blocks());
  for (const auto& rc : recount_refs(m, h)) EXPECT_EQ(rc, RefCounters{});
  const System s = boot();
  EXPECT_FALSE(refcount_mismatch(s).has_value());
}

TEST(TraceChecks, ShortTracesPassForEveryCountermeasure) {
  for (auto cm : {Countermeasure::Acpt, Countermeasure::SelectiveEvict, Countermeasure::FullFlush,
                  Countermeasure::IncoherencyDetect}) {
    for (std::uint32_t g = 0; g < 2; ++g) {
      TraceSpec spec;
      spec.seed = 3 + g;
      spec.step_count = 1500;
      spec.generator = g;
      HarnessConfig cfg;
      cfg.system.countermeasure = cm;
      const CheckResult r = run_trace_checks("all", spec, cfg, kCheckAll);
      EXPECT_TRUE(r.pass) << to_string(cm) << " gen " << g << ": " << r.witness;
      EXPECT_EQ(r.steps, spec.step_count);
    }
  }
}

TEST(TraceChecks, ExfiltrationIsFoundThroughAnInjectedMapping) {
  TraceSpec spec;
  spec.seed = 1;
  spec.step_count = 3000;
  const CheckResult r = check_no_exfiltration(spec, {}, [](System& s) {
    s.m.mem.write(PhysAddr{Layout::kL1Base}, encode_section(0, MapRights::user_rw(true)));
  });
  EXPECT_FALSE(r.pass);
  EXPECT_FALSE(r.witness.empty());
}

TEST(TwoTrace, DifferentGuestMemoryIsOutsideThePrecondition) {
  const System a = boot();
  System b = a;
  b.m.mem.write(kData, 1);
  const std::vector<GuestOp> ops = {GuestOp::read(kData.value)};
  const CheckResult r = check_two_trace(a, b, ops);
  EXPECT_FALSE(r.applicable);
}

TEST(TwoTrace, HypervisorSecretsDoNotReachTheGuest) {
  const System a = boot(Countermeasure::SelectiveEvict);
  System b = a;
  for (std::uint32_t i = 0; i < 64; ++i) b.m.mem.write(PhysAddr{i * 4}, 0xdead0000 + i);
  const std::vector<GuestOp> ops = {
      GuestOp::read(0x40), GuestOp::write(kData.value, 3), GuestOp::read(kData.value),
      GuestOp::hypercall(Hypercall::create_l2(a.layout.pool_block(8))),
      GuestOp::read(Layout::uncached_alias(kData.value))};
  const CheckResult r = check_two_trace(a, b, ops);
  EXPECT_TRUE(r.applicable);
  EXPECT_TRUE(r.pass) << r.witness;
}

TEST(Refcounts, MutationIsCaught) {
  TraceSpec spec;
  spec.seed = 2;
  spec.step_count = 400;
  const CheckResult ok = check_refcounts(spec);
  EXPECT_TRUE(ok.pass) << ok.witness;
  EXPECT_GT(ok.events, 50u);
  const CheckResult bad = check_refcounts(spec, {}, HypFaults{true});
  EXPECT_FALSE(bad.pass);
}

TEST(Obligations, PlantedUncacheableAliasBreaksAcpt) {
  TraceSpec spec;
  spec.seed = 4;
  spec.step_count = 500;
  HarnessConfig cfg;
  cfg.system.countermeasure = Countermeasure::Acpt;
  EXPECT_TRUE(check_obligations(Countermeasure::Acpt, spec, cfg).pass);
  const CheckResult r = check_obligations(Countermeasure::Acpt, spec, cfg, [](System& s) {
    s.m.mem.write(PhysAddr{(Layout::kL2Block << kBlockShift) + 3 * kWordBytes},
                  encode_small(0x00101000, MapRights::user_rw(false)));
  });
  EXPECT_FALSE(r.pass);
  EXPECT_FALSE(check_obligations(Countermeasure::None, spec).applicable);
}

TEST(CacheLemmas, PassAndMutationFails) {
  EXPECT_TRUE(check_cache_lemmas(1, 0).pass);
  const CheckResult r = check_cache_lemmas(1, 200);
  EXPECT_TRUE(r.pass) << r.witness;
  LemmaOptions bad;
  bad.filter = lru_filter_drop_touch;
  EXPECT_FALSE(check_cache_lemmas(1, 200, bad).pass);
}

}  // namespace
}  // namespace aliasim
