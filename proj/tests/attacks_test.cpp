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
#include <set>
#include <sstream>

#include "aliasim/attacks.hpp"

namespace aliasim {
namespace {

SystemConfig config(Countermeasure cm) {
  SystemConfig c;
  c.countermeasure = cm;
  return c;
}

TEST(IntegrityAttack, SucceedsOnlyWithoutCountermeasure) {
  const AttackOutcome none = run_integrity_attack(config(Countermeasure::None));
  EXPECT_TRUE(none.bypassed);
  EXPECT_FALSE(none.final_integrity);
  for (auto cm : {Countermeasure::Acpt, Countermeasure::SelectiveEvict, Countermeasure::FullFlush,
                  Countermeasure::IncoherencyDetect}) {
    const AttackOutcome o = run_integrity_attack(config(cm));
    EXPECT_FALSE(o.bypassed) << to_string(cm);
    EXPECT_TRUE(o.final_integrity) << to_string(cm);
    EXPECT_TRUE(o.monitor_detected) << to_string(cm);
  }
}

TEST(IntegrityAttack, MaliciousTableFailsValidation) {
  const System s = System::boot(SystemConfig{});
  EXPECT_TRUE(validate_l1(s.h, s.layout.boot_l1()).accepted);
  const Verdict v = validate_l1(s.h, malicious_l1(s.layout));
  EXPECT_FALSE(v.accepted);
  EXPECT_EQ(v.entry, Layout::kPtMb);
}

TEST(Probe, ReportsTheSetTheVictimTouched) {
  System s = System::boot(SystemConfig{});
  ProbeConfig cfg;
  cfg.target_sets = {4, 5, 6};
  prime(s, cfg);
  EXPECT_TRUE(probe(s, cfg).empty());
  prime(s, cfg);
  s.m.cache.read(s.m.mem, VirtAddr{0x00010000 + 5 * 64}, PhysAddr{0x00010000 + 5 * 64});
  const auto ev = probe(s, cfg);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].first, 5u);
}

TEST(Probe, WriteBackStrategyAlsoWorks) {
  System s = System::boot(SystemConfig{});
  ProbeConfig cfg;
  cfg.target_sets = {9};
  cfg.strategy = ProbeStrategy::WriteBackInertia;
  prime(s, cfg);
  s.m.cache.read(s.m.mem, VirtAddr{0x00010000 + 9 * 64}, PhysAddr{0x00010000 + 9 * 64});
  const auto ev = probe(s, cfg);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].first, 9u);
}

TEST(EvictionLog, RoundTripsThroughText) {
  EvictionLog log;
  log.entries.push_back({AesBlock{1, 2, 3}, {{64, 0}, {70, 3}}});
  log.entries.push_back({AesBlock{0xff}, {}});
  std::stringstream ss;
  write_log(ss, log);
  EXPECT_EQ(read_log(ss), log);
  std::istringstream bad("zz 1:2\n");
  EXPECT_THROW(read_log(bad), SimError);
}

TEST(KeyRecovery, FindsTheKeyFromAFewHundredEncryptions) {
  std::mt19937_64 rng(5);
  AesKey key{};
  for (auto& b : key) b = static_cast<std::uint8_t>(rng());
  AesAttackConfig cfg;
  const KeyExtraction k = extract_key(cfg, key, 2000, 10, rng);
  ASSERT_TRUE(k.recovered);
  EXPECT_EQ(k.key, key);
  EXPECT_LE(k.encryptions, 2000u);
}

TEST(KeyRecovery, EmptyLogDeterminesNothing) {
  const auto r = recover_last_round_key(EvictionLog{}, AesLayout{}.t4_layout(CacheGeometry{}));
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.insufficient.size(), 16u);
}

TEST(ChannelClosure, FullFlushMakesObservationsIndependentOfInput) {
  const AesKey key{7, 7, 7};
  auto observations = [&](Countermeasure cm) {
    AesAttackConfig cfg;
    cfg.system.countermeasure = cm;
    AesExperiment ex(cfg, key);
    std::mt19937_64 rng(1);
    std::set<std::vector<SetWay>> seen;
    for (int i = 0; i < 20; ++i) {
      AesBlock pt{};
      for (auto& b : pt) b = static_cast<std::uint8_t>(rng());
      seen.insert(ex.measure(pt).evicted);
    }
    return seen.size();
  };
  EXPECT_EQ(observations(Countermeasure::FullFlush), 1u);
  EXPECT_GT(observations(Countermeasure::None), 1u);
}

}  // namespace
}  // namespace aliasim
