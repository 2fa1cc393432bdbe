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

#include <algorithm>
#include <array>
#include <memory>
#include <vector>

#include "aliasim/types.hpp"

namespace aliasim {

/// Word-addressed physical memory split into copy-on-write 4 KB blocks.
///
/// Copying a PhysMemory shares every block; the first write to a shared
/// block clones it. Snapshots taken by the property harness are therefore
/// cheap, and two memories can be diffed block-by-block through pointer
/// identity before falling back to content comparison.
class PhysMemory {
 public:
  using BlockData = std::array<Word, kWordsPerBlock>;

  PhysMemory() = default;

  explicit PhysMemory(std::uint32_t size_bytes) {
    if (size_bytes == 0 || size_bytes % kBlockBytes != 0) {
      throw SimError("memory size must be a positive multiple of 4 KB");
    }
    blocks_.assign(size_bytes / kBlockBytes, zero_block());
  }

  [[nodiscard]] std::uint32_t size_bytes() const {
    return static_cast<std::uint32_t>(blocks_.size()) * kBlockBytes;
  }
  [[nodiscard]] std::uint32_t num_blocks() const {
    return static_cast<std::uint32_t>(blocks_.size());
  }
  [[nodiscard]] bool in_range(PhysAddr pa) const {
    return (pa.value >> kBlockShift) < blocks_.size();
  }

  [[nodiscard]] Word read(PhysAddr pa) const {
    check(pa);
    return (*blocks_[pa.value >> kBlockShift])[(pa.value & (kBlockBytes - 1)) >> kWordShift];
  }

  void write(PhysAddr pa, Word v) {
    check(pa);
    auto& slot = blocks_[pa.value >> kBlockShift];
    const std::uint32_t w = (pa.value & (kBlockBytes - 1)) >> kWordShift;
    if ((*slot)[w] == v) return;
    if (slot.use_count() > 1) slot = std::make_shared<BlockData>(*slot);
    (*slot)[w] = v;
  }

  /// True when both memories point at the very same storage for block `b`.
  [[nodiscard]] bool shares_block(const PhysMemory& other, Block b) const {
    return blocks_[b.index] == other.blocks_[b.index];
  }

  [[nodiscard]] const BlockData& block_data(Block b) const {
    if (b.index >= blocks_.size()) throw SimError("block out of range");
    return *blocks_[b.index];
  }

  friend bool operator==(const PhysMemory& a, const PhysMemory& b) {
    if (a.blocks_.size() != b.blocks_.size()) return false;
    for (std::size_t i = 0; i < a.blocks_.size(); ++i) {
      if (a.blocks_[i] != b.blocks_[i] && *a.blocks_[i] != *b.blocks_[i]) return false;
    }
    return true;
  }

 private:
  static const std::shared_ptr<BlockData>& zero_block() {
    static const auto zero = std::make_shared<BlockData>(BlockData{});
    return zero;
  }

  void check(PhysAddr pa) const {
    if ((pa.value & (kWordBytes - 1)) != 0) throw SimError("unaligned physical address");
    if (!in_range(pa)) throw SimError("physical address out of range");
  }

  std::vector<std::shared_ptr<BlockData>> blocks_;
};

}  // namespace aliasim
