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


// Command-line front end: runs attacks, property checks and scenarios and
// writes a JSON report.

#include <cstdint>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aliasim/aliasim.hpp"

namespace {

using namespace aliasim;

constexpr int kExitExpected = 0;
constexpr int kExitUnexpected = 1;
constexpr int kExitUsage = 2;

struct Options {
  std::string scenario;
  std::optional<std::uint32_t> cache_sets;
  std::optional<std::uint32_t> cache_ways;
  std::optional<std::uint32_t> line_bytes;
  std::optional<std::uint32_t> mem_mb;
  std::optional<std::string> countermeasure;
  std::optional<bool> monitor;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> encryptions;
  std::string out;
  std::uint32_t steps = 2000;
  std::uint32_t seeds = 3;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--scenario", o.scenario, "scenario JSON file")->check(CLI::ExistingFile);
  cmd->add_option("--cache-sets", o.cache_sets, "number of cache sets");
  cmd->add_option("--cache-ways", o.cache_ways, "associativity");
  cmd->add_option("--line-bytes", o.line_bytes, "cache line size in bytes");
  cmd->add_option("--mem-mb", o.mem_mb, "physical memory in MB");
  cmd->add_option("--countermeasure", o.countermeasure, "none, acpt, selective, flush or detect")
      ->check(CLI::IsMember({"none", "acpt", "selective", "flush", "detect"}));
  cmd->add_option("--monitor", o.monitor, "enable the W^X monitor (true/false)");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--encryptions", o.encryptions, "encryption budget for key extraction");
  cmd->add_option("--out", o.out, "report path (default: stdout)");
}

/// Scenario file first, flags on top.
Scenario resolve(const Options& o) {
  Scenario sc = o.scenario.empty() ? Scenario{} : load_scenario(o.scenario);
  SystemConfig& c = sc.system;
  if (o.cache_sets) c.geometry.num_sets = *o.cache_sets;
  if (o.cache_ways) c.geometry.ways = *o.cache_ways;
  if (o.line_bytes) {
    if (*o.line_bytes % kWordBytes != 0) throw SimError("--line-bytes must be a multiple of 4");
    c.geometry.line_words = *o.line_bytes / kWordBytes;
  }
  c.geometry.validate();
  if (o.mem_mb) c.mem_mb = *o.mem_mb;
  if (c.mem_mb < 6 || c.mem_mb > 4095) throw SimError("--mem-mb must be 6..4095");
  if (o.countermeasure) c.countermeasure = *parse_countermeasure(*o.countermeasure);
  if (o.monitor) c.monitor = *o.monitor;
  if (o.seed) c.seed = *o.seed;
  if (o.encryptions) sc.encryptions = *o.encryptions;
  return sc;
}

int emit(const Report& r, const Options& o) {
  const std::string text = nlohmann::json(r).dump(2) + "\n";
  if (o.out.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(o.out, std::ios::binary);
    if (!f) {
      std::cerr << "cannot write " << o.out << "\n";
      return kExitUsage;
    }
    f << text;
  }
  return r.expected ? kExitExpected : kExitUnexpected;
}

// ---------------------------------------------------------------------------

Report integrity_attack(const SystemConfig& cfg) {
  Report r;
  r.command = "run-attack integrity";
  r.config = make_config_record(cfg);
  const AttackOutcome o = run_integrity_attack(cfg);
  r.attacks.push_back(make_attack_record(o, cfg.countermeasure));
  // The undefended baseline is expected to fall; every countermeasure must hold.
  r.expected = cfg.countermeasure == Countermeasure::None ? o.bypassed : !o.bypassed;
  return r;
}

Report aes_attack(const SystemConfig& cfg, std::uint32_t encryptions) {
  Report r;
  r.command = "run-attack aes-extract";
  r.config = make_config_record(cfg);
  std::mt19937_64 rng(cfg.seed);
  AesKey secret{};
  for (auto& b : secret) b = static_cast<std::uint8_t>(rng());
  AesAttackConfig ac;
  ac.system = cfg;
  const KeyExtraction ke = extract_key(ac, secret, encryptions, 10, rng);
  KeyRecoveryRecord k;
  k.seed = cfg.seed;
  k.recovered = ke.recovered && ke.key == secret;
  k.encryptions = ke.encryptions;
  if (ke.recovered) {
    for (std::size_t i = 0; i < secret.size(); ++i) k.bytes_recovered += ke.key[i] == secret[i];
  } else {
    k.bytes_recovered = static_cast<std::uint32_t>(16 - ke.last.insufficient.size());
  }
  k.key = to_hex(secret);
  k.recovered_key = ke.recovered ? to_hex(ke.key) : "";
  r.key_recovery.push_back(k);
  // Only flushing on entry to the victim closes this channel.
  r.expected = cfg.countermeasure == Countermeasure::FullFlush ? !k.recovered : k.recovered;
  return r;
}

Report run_ops(const Scenario& sc) {
  Report r;
  r.command = "run";
  r.config = make_config_record(sc.system);
  System s = System::boot(sc.system);
  for (std::size_t i = 0; i < sc.ops.size(); ++i) {
    if (sc.ops[i].kind == OpKind::CleanLine || sc.ops[i].kind == OpKind::InvalidateLine) {
      // Cache maintenance is privileged; scenarios issue it on the kernel's behalf.
      s.m.mode = Mode::Privileged;
      const StepResult res = s.step(sc.ops[i]);
      s.m.mode = Mode::NonPrivileged;
      r.steps.push_back(make_step_record(i, sc.ops[i], res));
      continue;
    }
    r.steps.push_back(make_step_record(i, sc.ops[i], s.step(sc.ops[i])));
  }
  r.expected = true;
  return r;
}

Report spawn_demo(const SystemConfig& cfg) {
  Report r;
  r.command = "demo-spawn";
  r.config = make_config_record(cfg);
  System s = System::boot(cfg);
  const SpawnTrace t = run_spawn_demo(s);
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    StepRecord rec = make_step_record(i, t.steps[i].op, t.steps[i].result);
    rec.detail += " rc=";
    for (std::uint32_t k = 0; k < kL1Blocks; ++k) {
      rec.detail += (k ? "," : "") + std::to_string(t.steps[i].rc[k].wt);
    }
    r.steps.push_back(rec);
  }
  r.expected = t.accepted && t.switched && invariant_holds(s);
  return r;
}

// ---------------------------------------------------------------------------

std::vector<CheckResult> run_checks(const std::string& which, const Options& o,
                                    const Scenario& sc) {
  HarnessConfig hc;
  hc.system.geometry = sc.system.geometry;
  if (o.mem_mb || !o.scenario.empty()) hc.system.mem_mb = sc.system.mem_mb;
  if (o.countermeasure || !o.scenario.empty()) {
    hc.system.countermeasure = sc.system.countermeasure;
  }
  hc.system.monitor = sc.system.monitor;
  const std::uint64_t base = sc.system.seed;
  const bool all = which == "all";

  // One task per seed and check; results are gathered in a fixed order.
  std::vector<std::future<CheckResult>> jobs;
  auto spawn = [&](auto fn) { jobs.push_back(std::async(std::launch::async, fn)); };
  for (std::uint32_t k = 0; k < o.seeds; ++k) {
    TraceSpec ts;
    ts.seed = base + k;
    ts.step_count = o.steps;
    ts.generator = k % 2;
    if (all || which == "derivability") {
      spawn([=] {
        return run_trace_checks("derivability", ts, hc,
                                kCheckDerivability | kCheckMmuIntegrity | kCheckInvariant);
      });
    }
    if (all || which == "noninterference") {
      spawn([=] { return check_no_exfiltration(ts, hc); });
      spawn([=] { return check_no_infiltration(ts, hc); });
    }
    if (all || which == "refcount") {
      spawn([=] { return check_refcounts(ts, hc); });
    }
    if (all || which == "obligations") {
      for (auto cm : {Countermeasure::None, Countermeasure::Acpt, Countermeasure::SelectiveEvict,
                      Countermeasure::FullFlush, Countermeasure::IncoherencyDetect}) {
        spawn([=] { return check_obligations(cm, ts, hc); });
      }
    }
    if (all || which == "cache-lemmas") {
      spawn([=] { return check_cache_lemmas(ts.seed, 1000); });
    }
  }
  // Mutation checks: the oracle must notice each seeded bug.
  if (all || which == "refcount") {
    spawn([=] {
      TraceSpec ts;
      ts.seed = base;
      ts.step_count = std::max<std::uint32_t>(o.steps, 500);
      HypFaults f;
      f.skip_link_refcount = true;
      CheckResult m = check_refcounts(ts, hc, f);
      m.id = "refcount/mutation";
      m.pass = !m.pass;
      if (!m.pass) m.witness = "seeded refcount bug went unnoticed";
      return m;
    });
  }
  if (all || which == "cache-lemmas") {
    spawn([=] {
      LemmaOptions lo;
      lo.filter = lru_filter_drop_touch;
      CheckResult m = check_cache_lemmas(base, 1000, lo);
      m.id = "cache-lemmas/mutation";
      m.pass = !m.pass;
      if (!m.pass) m.witness = "seeded filter bug went unnoticed";
      return m;
    });
  }
  std::vector<CheckResult> out;
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aliasim: cache-aware memory subsystem and hypervisor simulator"};
  app.require_subcommand(1);
  Options o;

  std::string attack;
  auto* run_attack = app.add_subcommand("run-attack", "run an attack");
  run_attack->add_option("attack", attack, "integrity or aes-extract")
      ->required()
      ->check(CLI::IsMember({"integrity", "aes-extract"}));
  add_common(run_attack, o);

  std::string props;
  auto* check = app.add_subcommand("check-props", "run property checks");
  check->add_option("which", props, "all, derivability, refcount, cache-lemmas, noninterference, "
                                    "obligations")
      ->required()
      ->check(CLI::IsMember(
          {"all", "derivability", "refcount", "cache-lemmas", "noninterference", "obligations"}));
  check->add_option("--steps", o.steps, "steps per trace");
  check->add_option("--seeds", o.seeds, "number of seeds, starting at --seed");
  add_common(check, o);

  auto* spawn = app.add_subcommand("demo-spawn", "spawn a process through the paging API");
  add_common(spawn, o);

  auto* run = app.add_subcommand("run", "run a scenario's op stream or named attack");
  add_common(run, o);

  std::string golden_out;
  auto* golden = app.add_subcommand("golden-image", "write the signatures of the boot code");
  golden->add_option("path", golden_out, "output file")->required();
  add_common(golden, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    const Scenario sc = resolve(o);
    if (*run_attack) {
      if (attack == "integrity") return emit(integrity_attack(sc.system), o);
      return emit(aes_attack(sc.system, sc.encryptions), o);
    }
    if (*check) {
      Report r;
      r.command = "check-props " + props;
      r.config = make_config_record(sc.system);
      for (const auto& c : run_checks(props, o, sc)) {
        r.checks.push_back(make_check_record(c));
        if (c.applicable && !c.pass) r.expected = false;
      }
      return emit(r, o);
    }
    if (*spawn) return emit(spawn_demo(sc.system), o);
    if (*run) {
      if (o.scenario.empty()) throw SimError("run needs --scenario");
      if (sc.attack == "integrity") return emit(integrity_attack(sc.system), o);
      if (sc.attack == "aes-extract") return emit(aes_attack(sc.system, sc.encryptions), o);
      return emit(run_ops(sc), o);
    }
    if (*golden) {
      const System s = System::boot(sc.system);
      std::ofstream f(golden_out);
      if (!f) throw SimError("cannot write " + golden_out);
      f << "# boot code block signatures\n";
      write_golden_image(f, s.gi.signatures);
      return kExitExpected;
    }
  } catch (const SimError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
