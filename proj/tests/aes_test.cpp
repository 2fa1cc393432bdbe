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
#include <cstdint>
#include <random>

#include "aliasim/aes.hpp"

namespace aliasim {
namespace {

// Byte-oriented AES-128 written from the standard's description.
constexpr std::uint8_t kSbox[256] = {
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16};

std::uint8_t mul2(std::uint8_t x) {
  return static_cast<std::uint8_t>((x << 1) ^ ((x >> 7) * 0x1b));
}

std::array<std::uint8_t, 176> ref_expand(const AesKey& key) {
  static constexpr std::uint8_t rcon[11] = {0, 1, 2, 4, 8, 16, 32, 64, 128, 0x1b, 0x36};
  std::array<std::uint8_t, 176> w{};
  std::copy(key.begin(), key.end(), w.begin());
  for (int i = 16; i < 176; i += 4) {
    std::uint8_t t[4] = {w[i - 4], w[i - 3], w[i - 2], w[i - 1]};
    if (i % 16 == 0) {
      const std::uint8_t a = t[0];
      t[0] = kSbox[t[1]] ^ rcon[i / 16];
      t[1] = kSbox[t[2]];
      t[2] = kSbox[t[3]];
      t[3] = kSbox[a];
    }
    for (int k = 0; k < 4; ++k) w[i + k] = w[i - 16 + k] ^ t[k];
  }
  return w;
}

AesBlock ref_encrypt(const AesKey& key, const AesBlock& pt) {
  const auto w = ref_expand(key);
  AesBlock s = pt;
  auto add = [&](int r) {
    for (int i = 0; i < 16; ++i) s[i] ^= w[16 * r + i];
  };
  add(0);
  for (int r = 1; r <= 10; ++r) {
    for (auto& b : s) b = kSbox[b];
    AesBlock t = s;
    for (int c = 0; c < 4; ++c) {
      for (int row = 0; row < 4; ++row) t[4 * c + row] = s[4 * ((c + row) % 4) + row];
    }
    s = t;
    if (r != 10) {
      for (int c = 0; c < 4; ++c) {
        std::uint8_t* col = &s[4 * c];
        const std::uint8_t a0 = col[0], a1 = col[1], a2 = col[2], a3 = col[3];
        col[0] = mul2(a0) ^ mul2(a1) ^ a1 ^ a2 ^ a3;
        col[1] = a0 ^ mul2(a1) ^ mul2(a2) ^ a2 ^ a3;
        col[2] = a0 ^ a1 ^ mul2(a2) ^ mul2(a3) ^ a3;
        col[3] = mul2(a0) ^ a0 ^ a1 ^ a2 ^ mul2(a3);
      }
    }
    add(r);
  }
  return s;
}

template <std::size_t N>
std::array<std::uint8_t, N> bytes(const char* hex) {
  std::array<std::uint8_t, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    out[i] = static_cast<std::uint8_t>(std::stoul(std::string(hex + 2 * i, 2), nullptr, 16));
  }
  return out;
}

AesBlock encrypt_on_machine(const AesKey& key, const AesBlock& pt, AesVariant variant,
                            AesTrace* trace = nullptr) {
  MachineState m(1u << 20, CacheGeometry{});
  AesLayout lay;
  lay.variant = variant;
  install_aes_victim(m, lay, key);
  return aes_encrypt_logged(m, lay, pt, trace);
}

TEST(Aes, SboxMatchesTheStandardTable) {
  for (unsigned x = 0; x < 256; ++x) EXPECT_EQ(aes::sbox()[x], kSbox[x]) << x;
}

TEST(Aes, ReferenceMatchesTheStandardVector) {
  const auto key = bytes<16>("000102030405060708090a0b0c0d0e0f");
  const auto pt = bytes<16>("00112233445566778899aabbccddeeff");
  EXPECT_EQ(ref_encrypt(key, pt), bytes<16>("69c4e0d86a7b0430d8cdb78070b4c55a"));
}

TEST(Aes, KeyScheduleMatchesTheStandardExample) {
  const auto key = bytes<16>("2b7e151628aed2a6abf7158809cf4f3c");
  const RoundKeys rk = expand_key(key);
  EXPECT_EQ(rk[10], bytes<16>("d014f9a8c9ee2589e13f0cc8b6630ca6"));
  EXPECT_EQ(invert_key_schedule(rk[10]), key);
}

TEST(Aes, TableDrivenVictimMatchesReference) {
  std::mt19937_64 rng(11);
  for (int n = 0; n < 50; ++n) {
    AesKey key{};
    AesBlock pt{};
    for (auto& b : key) b = static_cast<std::uint8_t>(rng());
    for (auto& b : pt) b = static_cast<std::uint8_t>(rng());
    const AesBlock expect = ref_encrypt(key, pt);
    for (auto v : {AesVariant::Standard, AesVariant::CompactLast, AesVariant::ScrambledLast}) {
      EXPECT_EQ(encrypt_on_machine(key, pt, v), expect);
    }
    const auto w = ref_expand(key);
    AesBlock k10{};
    std::copy(w.begin() + 160, w.end(), k10.begin());
    EXPECT_EQ(invert_key_schedule(k10), key);
  }
}

TEST(Aes, LastRoundReadsTheLastTableOnly) {
  AesTrace trace;
  const AesLayout lay;
  encrypt_on_machine(AesKey{}, AesBlock{}, AesVariant::Standard, &trace);
  unsigned last_table = 0;
  for (const auto& [round, pa] : trace.reads) {
    const bool in_t4 = pa.value >= lay.last_table() && pa.value < lay.last_table() + 1024;
    if (in_t4) {
      EXPECT_EQ(round, 10u) << std::hex << pa.value;
    }
    last_table += in_t4;
  }
  EXPECT_EQ(last_table, 16u);
}

TEST(Aes, LastTableCoversSixteenSetsOfSixteenOutputs) {
  const auto layout = AesLayout{}.t4_layout(CacheGeometry{});
  ASSERT_EQ(layout.size(), 16u);
  EXPECT_EQ(layout.begin()->first, 64u);
  for (const auto& [set, values] : layout) {
    EXPECT_EQ(values.size(), 16u);
    for (unsigned i = 0; i < 16; ++i) EXPECT_EQ(values[i], kSbox[(set - 64) * 16 + i]);
  }
}

}  // namespace
}  // namespace aliasim
