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

// AES-128 with lookup tables, plus a victim that performs every table
// lookup through the simulated data cache.

#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "aliasim/machine.hpp"

namespace aliasim {

using AesBlock = std::array<std::uint8_t, 16>;
using AesKey = std::array<std::uint8_t, 16>;
using RoundKeys = std::array<AesBlock, 11>;

namespace aes {

constexpr std::uint8_t xtime(std::uint8_t x) {
  return static_cast<std::uint8_t>((x << 1) ^ ((x & 0x80) ? 0x1B : 0x00));
}

constexpr std::uint8_t gmul(std::uint8_t a, std::uint8_t b) {
  std::uint8_t p = 0;
  while (b != 0) {
    if (b & 1) p ^= a;
    a = xtime(a);
    b >>= 1;
  }
  return p;
}

constexpr std::array<std::uint8_t, 256> make_sbox() {
  std::array<std::uint8_t, 256> s{};
  for (unsigned x = 0; x < 256; ++x) {
    std::uint8_t inv = 0;
    if (x != 0) {
      for (unsigned y = 1; y < 256; ++y) {
        if (gmul(static_cast<std::uint8_t>(x), static_cast<std::uint8_t>(y)) == 1) {
          inv = static_cast<std::uint8_t>(y);
          break;
        }
      }
    }
    std::uint8_t r = inv;
    std::uint8_t b = inv;
    for (int i = 0; i < 4; ++i) {
      b = static_cast<std::uint8_t>((b << 1) | (b >> 7));
      r ^= b;
    }
    s[x] = static_cast<std::uint8_t>(r ^ 0x63);
  }
  return s;
}

inline const std::array<std::uint8_t, 256>& sbox() {
  static const auto s = make_sbox();
  return s;
}

/// Te0..Te3 and Te4 (the S-box replicated into all four bytes).
struct Tables {
  std::array<std::array<Word, 256>, 5> t{};

  Tables() {
    const auto& s = sbox();
    for (unsigned x = 0; x < 256; ++x) {
      const Word v = s[x];
      const Word w0 = (static_cast<Word>(xtime(s[x])) << 24) | (v << 16) | (v << 8) |
                      static_cast<Word>(xtime(s[x]) ^ s[x]);
      t[0][x] = w0;
      t[1][x] = (w0 >> 8) | (w0 << 24);
      t[2][x] = (w0 >> 16) | (w0 << 16);
      t[3][x] = (w0 >> 24) | (w0 << 8);
      t[4][x] = v * 0x01010101u;
    }
  }
};

inline const Tables& tables() {
  static const Tables t;
  return t;
}

inline constexpr std::uint8_t kRcon[10] = {0x01, 0x02, 0x04, 0x08, 0x10,
                                           0x20, 0x40, 0x80, 0x1B, 0x36};

}  // namespace aes

[[nodiscard]] inline RoundKeys expand_key(const AesKey& key) {
  const auto& s = aes::sbox();
  std::array<std::uint8_t, 176> w{};
  for (int i = 0; i < 16; ++i) w[i] = key[i];
  for (int i = 4; i < 44; ++i) {
    std::uint8_t t[4] = {w[4 * (i - 1)], w[4 * (i - 1) + 1], w[4 * (i - 1) + 2],
                         w[4 * (i - 1) + 3]};
    if (i % 4 == 0) {
      const std::uint8_t t0 = t[0];
      t[0] = static_cast<std::uint8_t>(s[t[1]] ^ aes::kRcon[i / 4 - 1]);
      t[1] = s[t[2]];
      t[2] = s[t[3]];
      t[3] = s[t0];
    }
    for (int k = 0; k < 4; ++k) w[4 * i + k] = w[4 * (i - 4) + k] ^ t[k];
  }
  RoundKeys rk{};
  for (int r = 0; r < 11; ++r) {
    for (int k = 0; k < 16; ++k) rk[r][k] = w[16 * r + k];
  }
  return rk;
}

/// Recovers the cipher key from the last round key by running the
/// schedule backwards.
[[nodiscard]] inline AesKey invert_key_schedule(const AesBlock& k10) {
  const auto& s = aes::sbox();
  std::array<std::uint8_t, 176> w{};
  for (int k = 0; k < 16; ++k) w[160 + k] = k10[k];
  for (int i = 43; i >= 4; --i) {
    std::uint8_t t[4] = {w[4 * (i - 1)], w[4 * (i - 1) + 1], w[4 * (i - 1) + 2],
                         w[4 * (i - 1) + 3]};
    if (i % 4 == 0) {
      const std::uint8_t t0 = t[0];
      t[0] = static_cast<std::uint8_t>(s[t[1]] ^ aes::kRcon[i / 4 - 1]);
      t[1] = s[t[2]];
      t[2] = s[t[3]];
      t[3] = s[t0];
    }
    for (int k = 0; k < 4; ++k) w[4 * (i - 4) + k] = w[4 * i + k] ^ t[k];
  }
  AesKey key{};
  for (int k = 0; k < 16; ++k) key[k] = w[k];
  return key;
}

enum class AesVariant : std::uint8_t {
  Standard,       // last round uses the 1 KB replicated table
  CompactLast,    // last round uses a packed 256-byte S-box
  ScrambledLast,  // last round reads every S-box line on each lookup
};

/// Physical placement of the victim's tables and round keys. Each table is
/// line-aligned; with the default 128x64-byte geometry T0..T3 occupy sets
/// 0..63 and T4 sets 64..79, and the round keys sit in sets 96..98.
struct AesLayout {
  std::uint32_t table_base = 0x00010000;
  std::uint32_t round_key_base = 0x00011800;
  AesVariant variant = AesVariant::Standard;

  [[nodiscard]] std::uint32_t table(unsigned i) const { return table_base + i * 1024; }
  [[nodiscard]] std::uint32_t last_table() const { return table(4); }

  /// Physical address holding the last-round output for S-box input x.
  [[nodiscard]] std::uint32_t last_round_addr(unsigned x) const {
    if (variant == AesVariant::CompactLast) return last_table() + (x & ~3u);
    return last_table() + x * kWordBytes;
  }

  /// For each cache set holding last-round table data, the S-box output
  /// bytes stored in that line.
  [[nodiscard]] std::map<std::uint32_t, std::vector<std::uint8_t>> t4_layout(
      const CacheGeometry& g) const {
    std::map<std::uint32_t, std::vector<std::uint8_t>> out;
    for (unsigned x = 0; x < 256; ++x) {
      const PhysAddr pa{last_round_addr(x)};
      out[g.set_index(VirtAddr{pa.value}, pa)].push_back(aes::sbox()[x]);
    }
    return out;
  }
};

/// Writes tables and round keys into physical memory (bypassing the cache).
inline void install_aes_victim(MachineState& m, const AesLayout& lay, const AesKey& key) {
  const auto& t = aes::tables();
  for (unsigned i = 0; i < 4; ++i) {
    for (unsigned x = 0; x < 256; ++x) m.mem.write(PhysAddr{lay.table(i) + x * 4}, t.t[i][x]);
  }
  if (lay.variant == AesVariant::CompactLast) {
    for (unsigned x = 0; x < 256; x += 4) {
      const auto& s = aes::sbox();
      const Word packed = static_cast<Word>(s[x]) | (static_cast<Word>(s[x + 1]) << 8) |
                          (static_cast<Word>(s[x + 2]) << 16) |
                          (static_cast<Word>(s[x + 3]) << 24);
      m.mem.write(PhysAddr{lay.last_table() + x}, packed);
    }
  } else {
    for (unsigned x = 0; x < 256; ++x) m.mem.write(PhysAddr{lay.last_table() + x * 4}, t.t[4][x]);
  }
  const RoundKeys rk = expand_key(key);
  for (unsigned r = 0; r < 11; ++r) {
    for (unsigned c = 0; c < 4; ++c) {
      const Word w = (static_cast<Word>(rk[r][4 * c]) << 24) |
                     (static_cast<Word>(rk[r][4 * c + 1]) << 16) |
                     (static_cast<Word>(rk[r][4 * c + 2]) << 8) | rk[r][4 * c + 3];
      m.mem.write(PhysAddr{lay.round_key_base + (r * 4 + c) * 4}, w);
    }
  }
}

/// Optional record of every physical address the victim reads, per round.
struct AesTrace {
  std::vector<std::pair<unsigned, PhysAddr>> reads;
};

/// Table-driven AES-128 encryption where each load is a cacheable read of
/// the simulated machine (through the victim's 1-1 mapping).
inline AesBlock aes_encrypt_logged(MachineState& m, const AesLayout& lay, const AesBlock& pt,
                                   AesTrace* trace = nullptr) {
  unsigned round = 0;
  auto load = [&](std::uint32_t pa) {
    if (trace != nullptr) trace->reads.emplace_back(round, PhysAddr{pa});
    return m.cache.read(m.mem, VirtAddr{pa}, PhysAddr{pa});
  };
  auto rk = [&](unsigned r, unsigned c) { return load(lay.round_key_base + (r * 4 + c) * 4); };
  auto last = [&](unsigned x) -> Word {
    switch (lay.variant) {
      case AesVariant::Standard: return load(lay.last_round_addr(x)) & 0xFFu;
      case AesVariant::CompactLast: return (load(lay.last_round_addr(x)) >> (8 * (x & 3))) & 0xFFu;
      case AesVariant::ScrambledLast: {
        Word v = 0;
        for (unsigned line = 0; line < 1024; line += 64) {
          const Word w = load(lay.last_table() + line + (x & 15) * 4);
          if ((x >> 4) == line / 64) v = w;
        }
        return v & 0xFFu;
      }
    }
    return 0;
  };

  Word s[4];
  for (unsigned c = 0; c < 4; ++c) {
    s[c] = ((static_cast<Word>(pt[4 * c]) << 24) | (static_cast<Word>(pt[4 * c + 1]) << 16) |
            (static_cast<Word>(pt[4 * c + 2]) << 8) | pt[4 * c + 3]) ^
           rk(0, c);
  }
  for (round = 1; round < 10; ++round) {
    Word t[4];
    for (unsigned c = 0; c < 4; ++c) {
      t[c] = load(lay.table(0) + (s[c] >> 24) * 4) ^
             load(lay.table(1) + ((s[(c + 1) & 3] >> 16) & 0xFF) * 4) ^
             load(lay.table(2) + ((s[(c + 2) & 3] >> 8) & 0xFF) * 4) ^
             load(lay.table(3) + (s[(c + 3) & 3] & 0xFF) * 4) ^ rk(round, c);
    }
    for (unsigned c = 0; c < 4; ++c) s[c] = t[c];
  }
  round = 10;
  AesBlock out{};
  for (unsigned c = 0; c < 4; ++c) {
    const Word k = rk(10, c);
    const Word b0 = last(s[c] >> 24);
    const Word b1 = last((s[(c + 1) & 3] >> 16) & 0xFF);
    const Word b2 = last((s[(c + 2) & 3] >> 8) & 0xFF);
    const Word b3 = last(s[(c + 3) & 3] & 0xFF);
    const Word w = ((b0 << 24) | (b1 << 16) | (b2 << 8) | b3) ^ k;
    out[4 * c] = static_cast<std::uint8_t>(w >> 24);
    out[4 * c + 1] = static_cast<std::uint8_t>(w >> 16);
    out[4 * c + 2] = static_cast<std::uint8_t>(w >> 8);
    out[4 * c + 3] = static_cast<std::uint8_t>(w);
  }
  return out;
}

/// Encryption outside the simulated machine, on a scratch copy of the
/// tables.
[[nodiscard]] inline AesBlock aes_encrypt_reference(const AesKey& key, const AesBlock& pt) {
  const AesLayout lay;
  MachineState m(1u << 20, CacheGeometry{});
  install_aes_victim(m, lay, key);
  return aes_encrypt_logged(m, lay, pt);
}

}  // namespace aliasim
