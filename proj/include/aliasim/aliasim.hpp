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

#include "aliasim/aes.hpp"
#include "aliasim/attacks.hpp"
#include "aliasim/cache.hpp"
#include "aliasim/descriptors.hpp"
#include "aliasim/diff.hpp"
#include "aliasim/harness.hpp"
#include "aliasim/hypervisor.hpp"
#include "aliasim/machine.hpp"
#include "aliasim/mmu.hpp"
#include "aliasim/monitor.hpp"
#include "aliasim/phys_memory.hpp"
#include "aliasim/report.hpp"
#include "aliasim/scenario.hpp"
#include "aliasim/spawn.hpp"
#include "aliasim/system.hpp"
#include "aliasim/types.hpp"
