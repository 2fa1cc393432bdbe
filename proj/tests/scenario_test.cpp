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

#include <array>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>

#include "aliasim/report.hpp"
#include "aliasim/scenario.hpp"

namespace aliasim {
namespace {

struct CliRun {
  int status = -1;
  std::string out;
};

CliRun cli(const std::string& args) {
  CliRun r;
  const std::string cmd = std::string(ALIASIM_CLI) + " " + args + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int st = pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string scenario(const char* name) { return std::string(ALIASIM_SCENARIOS) + "/" + name; }

TEST(Scenario, ParsesConfigurationAndOps) {
  const json j = json::parse(R"({
    "cache": {"sets": 64, "ways": 2, "line_bytes": 32, "indexing": "virtual", "policy": "random"},
    "mem_mb": 12, "countermeasure": "detect", "monitor": false, "seed": 9,
    "guest_memory": [{"first_mb": 1, "count_mb": 11}],
    "ops": [
      {"op": "read", "va": "0x00300000", "reg": 2},
      {"op": "write", "va": 4096, "value": "0xff"},
      {"op": "hypercall", "call": "map_l2", "bl": "0x104", "idx": 3, "target": "0x00300000",
       "rights": {"ap": "all_ro", "cacheable": false, "xn": true}},
      {"op": "invalidate", "va": "0x10"}
    ]})");
  const Scenario sc = parse_scenario(j);
  EXPECT_EQ(sc.system.geometry.num_sets, 64u);
  EXPECT_EQ(sc.system.geometry.ways, 2u);
  EXPECT_EQ(sc.system.geometry.line_words, 8u);
  EXPECT_EQ(sc.system.geometry.indexing, Indexing::Virtual);
  EXPECT_EQ(sc.system.geometry.policy, ReplacementPolicy::Random);
  EXPECT_EQ(sc.system.mem_mb, 12u);
  EXPECT_EQ(sc.system.countermeasure, Countermeasure::IncoherencyDetect);
  EXPECT_FALSE(sc.system.monitor);
  EXPECT_EQ(sc.system.seed, 9u);
  EXPECT_EQ(sc.system.guest_memory, (std::vector<Region>{{1, 11}}));
  ASSERT_EQ(sc.ops.size(), 4u);
  EXPECT_EQ(sc.ops[0].kind, OpKind::Read);
  EXPECT_EQ(sc.ops[0].va.value, 0x00300000u);
  EXPECT_EQ(sc.ops[1].value, 0xffu);
  EXPECT_EQ(sc.ops[2].call.kind, HypercallKind::MapL2);
  EXPECT_EQ(sc.ops[2].call.bl, 0x104u);
  EXPECT_EQ(sc.ops[2].call.idx, 3u);
  EXPECT_FALSE(sc.ops[2].call.rights.cacheable);
  EXPECT_EQ(sc.ops[3].kind, OpKind::InvalidateLine);
}

TEST(Scenario, RejectsMalformedInput) {
  EXPECT_THROW(parse_scenario(json::parse(R"({"countermeasure": "magic"})")), SimError);
  EXPECT_THROW(parse_scenario(json::parse(R"({"cache": {"sets": 3}})")), SimError);
  EXPECT_THROW(parse_scenario(json::parse(R"({"attack": "rowhammer"})")), SimError);
  EXPECT_THROW(parse_scenario(json::parse(R"({"ops": [{"op": "jump"}]})")), SimError);
  EXPECT_THROW(parse_scenario(json::parse(R"({"ops": [{"op": "hypercall", "call": "x"}]})")),
               SimError);
}

TEST(Scenario, GoldenImageRoundTrips) {
  const std::set<Signature> sigs = {0, 0x1234abcd, 0xffffffff};
  std::stringstream ss;
  write_golden_image(ss, sigs);
  EXPECT_EQ(read_golden_image(ss), sigs);
  std::istringstream commented("# boot code\n0000000a\n  0xB  # trailing\n\n");
  EXPECT_EQ(read_golden_image(commented), (std::set<Signature>{10, 11}));
}

TEST(Scenario, SamplesLoad) {
  for (const auto& e : std::filesystem::directory_iterator(ALIASIM_SCENARIOS)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW((void)load_scenario(e.path())) << e.path();
  }
  const Scenario sc = load_scenario(scenario("spawn_ops.json"));
  ASSERT_TRUE(sc.system.golden.has_value());
  EXPECT_EQ(sc.system.golden->size(), kBlocksPerSection);
}

TEST(Report, RoundTripsThroughJson) {
  Report r;
  r.command = "check-props";
  r.expected = true;
  r.checks.push_back(CheckRecord{"refcount", 3, true, true, 10, 7, ""});
  r.key_recovery.push_back(KeyRecoveryRecord{1, true, 120, 16, "00", "00"});
  const json j = r;
  EXPECT_EQ(j.get<Report>(), r);
}

TEST(Cli, CheckPropsIsDeterministic) {
  const std::string args = "check-props all --seed 7 --steps 300 --seeds 1";
  const CliRun a = cli(args);
  const CliRun b = cli(args);
  EXPECT_EQ(a.status, 0) << a.out;
  EXPECT_EQ(a.out, b.out);
  const json j = json::parse(a.out);
  EXPECT_TRUE(j.at("expected").get<bool>());
  EXPECT_FALSE(j.at("checks").empty());
}

TEST(Cli, IntegrityAttackOutcomesAndExitCodes) {
  const CliRun none = cli("run-attack integrity --countermeasure none");
  EXPECT_EQ(none.status, 0);
  EXPECT_TRUE(json::parse(none.out).at("attacks").at(0).at("bypassed").get<bool>());
  const CliRun sel = cli("run --scenario " + scenario("integrity_selective.json"));
  EXPECT_EQ(sel.status, 0);
  EXPECT_FALSE(json::parse(sel.out).at("attacks").at(0).at("bypassed").get<bool>());
  EXPECT_EQ(cli("run-attack integrity --countermeasure magic").status, 2);
  EXPECT_EQ(cli("no-such-command").status, 2);
}

TEST(Cli, ScenarioOpStreamAndSpawnDemo) {
  const CliRun r = cli("run --scenario " + scenario("spawn_ops.json"));
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(json::parse(r.out).at("steps").size(), 10u);
  const CliRun d = cli("demo-spawn");
  EXPECT_EQ(d.status, 0) << d.out;
}

}  // namespace
}  // namespace aliasim
