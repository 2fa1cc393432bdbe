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

#include <random>

#include "aliasim/mmu.hpp"
#include "aliasim/system.hpp"

namespace aliasim {
namespace {

System boot8() {
  SystemConfig c;
  c.mem_mb = 8;
  return System::boot(c);
}

void put_l1(System& s, std::uint32_t idx, Word w) {
  s.m.mem.write(PhysAddr{s.m.coregs.ttbr0.value + idx * kWordBytes}, w);
}

TEST(Descriptors, HandAssembledWords) {
  // section 0x003, AP=011, C, B, XN, domain 0
  EXPECT_EQ(encode_section(0x00300000, MapRights::user_rw(true)), 0x00300C1Eu);
  // small page 0x00205, AP=110 (AP2 at bit 9), C, B, XN in bit 0
  EXPECT_EQ(encode_small(0x00205000, MapRights::user_ro()), 0x0020522Fu);
  EXPECT_EQ(encode_page_table(0x00104C00, 3), 0x00104C61u);
}

TEST(Descriptors, DecodeInvertsEncode) {
  for (std::uint8_t ap = 0; ap < 8; ++ap) {
    if (ap == 4) continue;
    for (bool c : {false, true}) {
      for (bool xn : {false, true}) {
        const MapRights r{AccessPerm{ap}, c, xn, 5};
        const L1Desc d1 = decode_l1(encode_section(0x12300000, r));
        EXPECT_EQ(d1.kind, L1Kind::Section);
        EXPECT_EQ(d1.base, 0x12300000u);
        EXPECT_EQ(d1.rights, r);
        MapRights r2 = r;
        r2.domain = 0;
        const L2Desc d2 = decode_l2(encode_small(0x00abc000, r2));
        EXPECT_EQ(d2.kind, L2Kind::Small);
        EXPECT_EQ(d2.base, 0x00abc000u);
        EXPECT_EQ(d2.rights, r2);
      }
    }
  }
}

TEST(Descriptors, UnsupportedEncodingsAreUnpredictable) {
  EXPECT_EQ(decode_l1(encode_section(0, {AccessPerm::reserved(), true, true, 0})).kind,
            L1Kind::Unpredictable);
  EXPECT_EQ(decode_l1(0x00040002u).kind, L1Kind::Unpredictable);  // supersection
  EXPECT_EQ(decode_l1(0x3u).kind, L1Kind::Unpredictable);
  EXPECT_EQ(decode_l2(0x00001001u).kind, L2Kind::Unpredictable);  // large page
  EXPECT_EQ(decode_l2(encode_small(0, {AccessPerm::reserved(), true, true, 0})).kind,
            L2Kind::Unpredictable);
  EXPECT_EQ(decode_l1(0).kind, L1Kind::Fault);
  EXPECT_EQ(decode_l2(0).kind, L2Kind::Fault);
}

TEST(AccessPermTest, PermissionTable) {
  using M = Mode;
  EXPECT_FALSE(AccessPerm::none().can_read(M::Privileged));
  EXPECT_TRUE(AccessPerm::priv_rw().can_write(M::Privileged));
  EXPECT_FALSE(AccessPerm::priv_rw().can_read(M::NonPrivileged));
  EXPECT_TRUE(AccessPerm::priv_rw_user_ro().can_read(M::NonPrivileged));
  EXPECT_FALSE(AccessPerm::priv_rw_user_ro().can_write(M::NonPrivileged));
  EXPECT_TRUE(AccessPerm::all_rw().can_write(M::NonPrivileged));
  EXPECT_FALSE(AccessPerm::priv_ro().can_write(M::Privileged));
  EXPECT_FALSE(AccessPerm::all_ro().can_write(M::NonPrivileged));
  EXPECT_TRUE(AccessPerm::all_ro().can_read(M::NonPrivileged));
}

TEST(Translate, SectionsPagesAndFaults) {
  System s = boot8();
  const auto u = Mode::NonPrivileged;
  Translation t = translate(s.m, VirtAddr{0x00312344}, u, AccessReq::Write);
  ASSERT_TRUE(t.ok());
  EXPECT_EQ(t.pa.value, 0x00312344u);
  EXPECT_TRUE(t.cacheable);
  t = translate(s.m, VirtAddr{Layout::uncached_alias(0x00312344)}, u, AccessReq::Read);
  ASSERT_TRUE(t.ok());
  EXPECT_EQ(t.pa.value, 0x00312344u);
  EXPECT_FALSE(t.cacheable);
  EXPECT_EQ(translate(s.m, VirtAddr{0x10}, u, AccessReq::Read).fault, FaultKind::Permission);
  EXPECT_TRUE(translate(s.m, VirtAddr{0x10}, Mode::Privileged, AccessReq::Read).ok());
  EXPECT_EQ(translate(s.m, VirtAddr{0x00200000}, u, AccessReq::Write).fault,
            FaultKind::Permission);
  EXPECT_TRUE(translate(s.m, VirtAddr{0x00200000}, u, AccessReq::Execute).ok());
  EXPECT_EQ(translate(s.m, VirtAddr{0x00100000}, u, AccessReq::Read).fault, FaultKind::Unmapped);
  EXPECT_EQ(translate(s.m, VirtAddr{Layout::l2_slot_va(3)}, u, AccessReq::Read).fault,
            FaultKind::Unmapped);

  // A small page through the boot L2.
  s.m.mem.write(PhysAddr{(Layout::kL2Block << kBlockShift) + 3 * kWordBytes},
                encode_small(0x00456000, MapRights::user_ro()));
  t = translate(s.m, VirtAddr{Layout::l2_slot_va(3) + 0x10}, u, AccessReq::Read);
  ASSERT_TRUE(t.ok());
  EXPECT_EQ(t.pa.value, 0x00456010u);
  EXPECT_EQ(translate(s.m, VirtAddr{Layout::l2_slot_va(3)}, u, AccessReq::Write).fault,
            FaultKind::Permission);

  s.m.coregs.dacr = 0;
  EXPECT_EQ(translate(s.m, VirtAddr{0x00312344}, u, AccessReq::Read).fault, FaultKind::Domain);
  s.m.coregs.mmu_enabled = false;
  t = translate(s.m, VirtAddr{0x00000040}, u, AccessReq::Write);
  EXPECT_TRUE(t.ok());
  EXPECT_FALSE(t.cacheable);
}

TEST(Translate, WalkSeesTheCoreView) {
  System s = boot8();
  const PhysAddr entry{Layout::kL1Base + 0x500 * kWordBytes};
  s.m.cache.write(s.m.mem, VirtAddr{entry.value}, entry,
                  encode_section(0x00300000, MapRights::user_ro()));
  EXPECT_EQ(s.m.mem.read(entry), 0u);
  EXPECT_TRUE(translate(s.m, VirtAddr{0x50000000}, Mode::NonPrivileged, AccessReq::Read).ok());
}

// Mon by brute force: translate every page of the address space.
TEST(AccessMapTest, AgreesWithExhaustiveTranslation) {
  System s = boot8();
  s.m.mem.write(PhysAddr{(Layout::kL2Block << kBlockShift) + 7 * kWordBytes},
                encode_small(0x00601000, MapRights::user_rw(false)));
  put_l1(s, 0x300, encode_section(0x00200000, MapRights::user_rx()));
  const AccessMap map(s.m);
  const std::uint32_t blocks = s.m.mem.num_blocks();
  for (Mode m : {Mode::NonPrivileged, Mode::Privileged}) {
    for (AccessReq q : {AccessReq::Read, AccessReq::Write, AccessReq::Execute}) {
      std::vector<bool> oracle(blocks, false);
      for (std::uint64_t va = 0; va < (1ull << 32); va += kBlockBytes) {
        const Translation t = translate(s.m, VirtAddr{static_cast<std::uint32_t>(va)}, m, q);
        if (t.ok()) oracle[t.pa.block().index] = true;
      }
      for (std::uint32_t b = 0; b < blocks; ++b) {
        ASSERT_EQ(map.allows(Block{b}, m, q), oracle[b])
            << "block " << b << " mode " << to_string(m) << " req " << to_string(q);
      }
    }
  }
  EXPECT_TRUE(map.has(Block{0x601}, AccessMap::kUWtUncached));
  EXPECT_TRUE(map.in_footprint(PhysAddr{Layout::kL1Base + 0x3ffc}));
  EXPECT_TRUE(map.in_footprint(PhysAddr{(Layout::kL2Block << kBlockShift) + 0x0c00}));
  EXPECT_FALSE(map.in_footprint(PhysAddr{0x00300000}));
}

TEST(MmuEquivalence, DetectsTableChangesOnly) {
  const System s = boot8();
  System t = s;
  t.m.cache.write(t.m.mem, VirtAddr{0x00300000}, PhysAddr{0x00300000}, 1);
  EXPECT_TRUE(mmu_equivalent(s.m, t.m, 64, 1));
  put_l1(t, 0x500, encode_section(0x00300000, MapRights::user_ro()));
  EXPECT_FALSE(mmu_equivalent(s.m, t.m));
  System u = s;
  u.m.mem.write(PhysAddr{Layout::kL1Base + 3 * kWordBytes},
                encode_section(0x00300000, MapRights::user_ro()));  // differs only in rights
  EXPECT_FALSE(mmu_equivalent(s.m, u.m));
}

TEST(MmuSafety, BootStateIsSafe) {
  const System s = boot8();
  std::mt19937_64 rng(1);
  EXPECT_TRUE(mmu_safe_check(s.m, 1000, rng));
}

TEST(MmuSafety, WritableTableIsUnsafe) {
  System s = boot8();
  put_l1(s, Layout::kPtMb, encode_section(Layout::mb_base(Layout::kPtMb), MapRights::user_rw()));
  std::mt19937_64 rng(1);
  EXPECT_FALSE(mmu_safe_check(s.m, 1000, rng));
}

TEST(WriteDerivable, OnlyWritableAddressesMayChange) {
  const System s = boot8();
  System t = s;
  t.m.cache.write(t.m.mem, VirtAddr{0x00300000}, PhysAddr{0x00300000}, 1);
  EXPECT_TRUE(write_derivable(s.m, t.m, Mode::NonPrivileged));
  t.m.mem.write(PhysAddr{0x00200000}, 1);
  EXPECT_FALSE(write_derivable(s.m, t.m, Mode::NonPrivileged));
}

}  // namespace
}  // namespace aliasim
