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

// Scenario files: JSON documents describing a system configuration and
// either an explicit guest op stream or a named attack.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "aliasim/system.hpp"
#include "json.hpp"

namespace aliasim {

using nlohmann::json;

struct Scenario {
  SystemConfig system{};
  std::string golden_image;  // path of a hex-lines signature file, may be empty
  std::string attack;        // "integrity", "aes-extract" or empty
  std::uint32_t encryptions = 5000;
  std::vector<GuestOp> ops;
};

namespace detail {

inline std::uint32_t as_u32(const json& j, const char* what) {
  if (j.is_number_unsigned()) {
    const auto v = j.get<std::uint64_t>();
    if (v > 0xFFFFFFFFull) throw SimError(std::string(what) + ": out of range");
    return static_cast<std::uint32_t>(v);
  }
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used, 0);
    } catch (const std::exception&) {
      throw SimError(std::string(what) + ": not a number: " + s);
    }
    if (used != s.size() || v > 0xFFFFFFFFull) {
      throw SimError(std::string(what) + ": not a 32-bit number: " + s);
    }
    return static_cast<std::uint32_t>(v);
  }
  throw SimError(std::string(what) + ": expected a number");
}

inline std::uint32_t field_u32(const json& j, const char* key, std::uint32_t fallback) {
  return j.contains(key) ? as_u32(j.at(key), key) : fallback;
}

inline const std::pair<const char*, AccessPerm> kPermNames[] = {
    {"none", AccessPerm::none()},       {"priv_rw", AccessPerm::priv_rw()},
    {"priv_rw_user_ro", AccessPerm::priv_rw_user_ro()}, {"all_rw", AccessPerm::all_rw()},
    {"reserved", AccessPerm::reserved()}, {"priv_ro", AccessPerm::priv_ro()},
    {"all_ro", AccessPerm::all_ro()},
};

inline AccessPerm parse_perm(const json& j) {
  if (j.is_string()) {
    for (const auto& [name, p] : kPermNames) {
      if (j.get<std::string>() == name) return p;
    }
  }
  const std::uint32_t bits = as_u32(j, "ap");
  if (bits > 7) throw SimError("ap: three bits expected");
  return AccessPerm{static_cast<std::uint8_t>(bits)};
}

inline MapRights parse_rights(const json& j) {
  MapRights r{};
  r.ap = parse_perm(j.at("ap"));
  r.cacheable = j.value("cacheable", true);
  r.xn = j.value("xn", true);
  r.domain = static_cast<std::uint8_t>(field_u32(j, "domain", 0) & 0xf);
  return r;
}

inline HypercallKind parse_call_kind(const std::string& s) {
  for (auto k : {HypercallKind::Switch, HypercallKind::CreateL1, HypercallKind::CreateL2,
                 HypercallKind::FreeL1, HypercallKind::FreeL2, HypercallKind::MapL1,
                 HypercallKind::MapL2, HypercallKind::UnmapL1, HypercallKind::UnmapL2,
                 HypercallKind::LinkL1}) {
    if (s == to_string(k)) return k;
  }
  throw SimError("unknown hypercall: " + s);
}

inline GuestOp parse_op(const json& j) {
  const std::string kind = j.at("op").get<std::string>();
  if (kind == "read") {
    return GuestOp::read(as_u32(j.at("va"), "va"),
                         static_cast<std::uint8_t>(field_u32(j, "reg", 0) % kNumRegs));
  }
  if (kind == "write") return GuestOp::write(as_u32(j.at("va"), "va"), as_u32(j.at("value"), "value"));
  if (kind == "clean") return GuestOp::clean(as_u32(j.at("va"), "va"));
  if (kind == "invalidate") return GuestOp::invalidate(as_u32(j.at("va"), "va"));
  if (kind == "hypercall") {
    Hypercall c;
    c.kind = parse_call_kind(j.at("call").get<std::string>());
    c.bl = field_u32(j, "bl", 0);
    c.idx = field_u32(j, "idx", 0);
    c.target = field_u32(j, "target", 0);
    if (j.contains("rights")) c.rights = parse_rights(j.at("rights"));
    return GuestOp::hypercall(c);
  }
  throw SimError("unknown op: " + kind);
}

inline std::vector<Region> parse_regions(const json& j) {
  std::vector<Region> out;
  for (const auto& r : j) out.push_back({as_u32(r.at("first_mb"), "first_mb"), as_u32(r.at("count_mb"), "count_mb")});
  return out;
}

}  // namespace detail

/// One signature per line, hexadecimal, '#' starts a comment.
[[nodiscard]] inline std::set<Signature> read_golden_image(std::istream& is) {
  std::set<Signature> out;
  std::string line;
  while (std::getline(is, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    out.insert(detail::as_u32(json(tok.rfind("0x", 0) == 0 ? tok : "0x" + tok), "signature"));
  }
  return out;
}

inline void write_golden_image(std::ostream& os, const std::set<Signature>& sigs) {
  for (Signature s : sigs) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x\n", s);
    os << buf;
  }
}

[[nodiscard]] inline Scenario parse_scenario(const json& j,
                                             const std::filesystem::path& base_dir = {}) {
  Scenario sc;
  SystemConfig& cfg = sc.system;
  if (j.contains("cache")) {
    const json& c = j.at("cache");
    cfg.geometry.num_sets = detail::field_u32(c, "sets", cfg.geometry.num_sets);
    cfg.geometry.ways = detail::field_u32(c, "ways", cfg.geometry.ways);
    const std::uint32_t line = detail::field_u32(c, "line_bytes", cfg.geometry.line_bytes());
    if (line % kWordBytes != 0) throw SimError("line_bytes must be a multiple of 4");
    cfg.geometry.line_words = line / kWordBytes;
    const std::string idx = c.value("indexing", "physical");
    if (idx != "physical" && idx != "virtual") throw SimError("indexing: physical or virtual");
    cfg.geometry.indexing = idx == "virtual" ? Indexing::Virtual : Indexing::Physical;
    const std::string pol = c.value("policy", "lru");
    if (pol != "lru" && pol != "random") throw SimError("policy: lru or random");
    cfg.geometry.policy = pol == "random" ? ReplacementPolicy::Random : ReplacementPolicy::Lru;
    cfg.geometry.validate();
  }
  cfg.mem_mb = detail::field_u32(j, "mem_mb", cfg.mem_mb);
  if (j.contains("countermeasure")) {
    const auto cm = parse_countermeasure(j.at("countermeasure").get<std::string>());
    if (!cm) throw SimError("unknown countermeasure");
    cfg.countermeasure = *cm;
  }
  cfg.monitor = j.value("monitor", cfg.monitor);
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("guest_memory")) cfg.guest_memory = detail::parse_regions(j.at("guest_memory"));
  if (j.contains("always_cacheable")) {
    cfg.always_cacheable = detail::parse_regions(j.at("always_cacheable"));
  }
  if (j.contains("golden_image")) {
    std::filesystem::path p = j.at("golden_image").get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    sc.golden_image = p.string();
    std::ifstream in(p);
    if (!in) throw SimError("cannot open golden image " + p.string());
    cfg.golden = read_golden_image(in);
  }
  sc.attack = j.value("attack", "");
  if (!sc.attack.empty() && sc.attack != "integrity" && sc.attack != "aes-extract") {
    throw SimError("unknown attack: " + sc.attack);
  }
  sc.encryptions = detail::field_u32(j, "encryptions", sc.encryptions);
  if (j.contains("ops")) {
    for (const auto& op : j.at("ops")) sc.ops.push_back(detail::parse_op(op));
  }
  return sc;
}

[[nodiscard]] inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SimError("cannot open scenario " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw SimError("scenario " + path.string() + ": " + e.what());
  }
  try {
    return parse_scenario(j, path.parent_path());
  } catch (const json::exception& e) {
    throw SimError("scenario " + path.string() + ": " + e.what());
  }
}

}  // namespace aliasim
