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

// Structured run reports. Everything in a report is a function of the
// inputs and the seed; nothing time- or host-dependent is recorded.

#include <cstdint>
#include <string>
#include <vector>

#include "aliasim/attacks.hpp"
#include "aliasim/harness.hpp"
#include "aliasim/system.hpp"
#include "json.hpp"

namespace aliasim {

struct ConfigRecord {
  std::uint32_t cache_sets = 0;
  std::uint32_t cache_ways = 0;
  std::uint32_t line_bytes = 0;
  std::string indexing;
  std::string policy;
  std::uint32_t mem_mb = 0;
  std::string countermeasure;
  bool monitor = true;
  std::uint64_t seed = 0;

  friend bool operator==(const ConfigRecord&, const ConfigRecord&) = default;
};

struct StepRecord {
  std::uint64_t index = 0;
  std::string op;
  std::string detail;
  std::string outcome;  // value, done, fault, accepted, rejected, illegal
  std::string reason;   // fault kind or rejection reason
  std::uint32_t value = 0;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct AttackRecord {
  std::string name;
  std::string countermeasure;
  bool bypassed = false;
  bool monitor_detected = false;
  bool final_integrity = true;
  std::string blocked_by;
  std::vector<StepRecord> requests;

  friend bool operator==(const AttackRecord&, const AttackRecord&) = default;
};

struct KeyRecoveryRecord {
  std::uint64_t seed = 0;
  bool recovered = false;
  std::uint64_t encryptions = 0;
  std::uint32_t bytes_recovered = 0;
  std::string key;
  std::string recovered_key;

  friend bool operator==(const KeyRecoveryRecord&, const KeyRecoveryRecord&) = default;
};

struct CheckRecord {
  std::string id;
  std::uint64_t seed = 0;
  bool applicable = true;
  bool pass = true;
  std::uint64_t steps = 0;
  std::uint64_t events = 0;
  std::string witness;

  friend bool operator==(const CheckRecord&, const CheckRecord&) = default;
};

struct Report {
  std::string command;
  ConfigRecord config;
  bool expected = true;
  std::vector<StepRecord> steps;
  std::vector<AttackRecord> attacks;
  std::vector<KeyRecoveryRecord> key_recovery;
  std::vector<CheckRecord> checks;

  friend bool operator==(const Report&, const Report&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ConfigRecord, cache_sets, cache_ways, line_bytes,
                                                indexing, policy, mem_mb, countermeasure, monitor,
                                                seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StepRecord, index, op, detail, outcome, reason,
                                                value)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AttackRecord, name, countermeasure, bypassed,
                                                monitor_detected, final_integrity, blocked_by,
                                                requests)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(KeyRecoveryRecord, seed, recovered, encryptions,
                                                bytes_recovered, key, recovered_key)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CheckRecord, id, seed, applicable, pass, steps,
                                                events, witness)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Report, command, config, expected, steps, attacks,
                                                key_recovery, checks)

[[nodiscard]] inline ConfigRecord make_config_record(const SystemConfig& c) {
  ConfigRecord r;
  r.cache_sets = c.geometry.num_sets;
  r.cache_ways = c.geometry.ways;
  r.line_bytes = c.geometry.line_bytes();
  r.indexing = c.geometry.indexing == Indexing::Virtual ? "virtual" : "physical";
  r.policy = c.geometry.policy == ReplacementPolicy::Random ? "random" : "lru";
  r.mem_mb = c.mem_mb;
  r.countermeasure = to_string(c.countermeasure);
  r.monitor = c.monitor;
  r.seed = c.seed;
  return r;
}

[[nodiscard]] inline std::string describe_op(const GuestOp& op) {
  switch (op.kind) {
    case OpKind::Read: return "va=" + hex32(op.va.value) + " reg=" + std::to_string(op.reg);
    case OpKind::Write: return "va=" + hex32(op.va.value) + " value=" + hex32(op.value);
    case OpKind::CleanLine:
    case OpKind::InvalidateLine: return "va=" + hex32(op.va.value);
    case OpKind::Hypercall: {
      const Hypercall& c = op.call;
      return std::string(to_string(c.kind)) + " bl=" + hex32(c.bl) + " idx=" + hex32(c.idx) +
             " target=" + hex32(c.target);
    }
  }
  return "";
}

[[nodiscard]] inline StepRecord make_step_record(std::uint64_t index, const GuestOp& op,
                                                 const StepResult& r) {
  StepRecord s;
  s.index = index;
  s.op = to_string(op.kind);
  s.detail = describe_op(op);
  switch (r.kind) {
    case StepKind::Value:
      s.outcome = "value";
      s.value = r.value;
      break;
    case StepKind::Done: s.outcome = "done"; break;
    case StepKind::Fault:
      s.outcome = "fault";
      s.reason = to_string(r.fault);
      break;
    case StepKind::Illegal: s.outcome = "illegal"; break;
    case StepKind::Hypercall:
      s.outcome = r.verdict.accepted ? "accepted" : "rejected";
      if (!r.verdict.accepted) s.reason = to_string(r.verdict.reason);
      break;
  }
  return s;
}

[[nodiscard]] inline AttackRecord make_attack_record(const AttackOutcome& o, Countermeasure cm) {
  AttackRecord a;
  a.name = "integrity";
  a.countermeasure = to_string(cm);
  a.bypassed = o.bypassed;
  a.monitor_detected = o.monitor_detected;
  a.final_integrity = o.final_integrity;
  a.blocked_by = o.blocked_by ? to_string(*o.blocked_by) : "";
  for (std::size_t i = 0; i < o.steps.size(); ++i) {
    StepRecord s;
    s.index = i;
    s.op = "hypercall";
    s.detail = o.steps[i].label;
    s.outcome = o.steps[i].verdict.accepted ? "accepted" : "rejected";
    if (!o.steps[i].verdict.accepted) s.reason = to_string(o.steps[i].verdict.reason);
    a.requests.push_back(s);
  }
  return a;
}

[[nodiscard]] inline CheckRecord make_check_record(const CheckResult& c) {
  return {c.id, c.seed, c.applicable, c.pass, c.steps, c.events, c.witness};
}

}  // namespace aliasim
