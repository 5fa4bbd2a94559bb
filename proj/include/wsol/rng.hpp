// Copyright (c) 2026 the wsolkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>

namespace wsol {

/// Deterministic PRNG (splitmix64). std::mt19937 distributions are
/// implementation-defined, so every seeded artifact in this project draws
/// from this generator to keep outputs byte-identical everywhere.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) { return lo + uniform_int(hi - lo + 1); }

    /// Derive an independent deterministic stream (e.g. per image id).
    Rng fork(uint64_t salt) const {
        Rng r(state_ ^ (salt * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull));
        r.next_u64();
        return r;
    }

private:
    uint64_t state_;
};

}  // namespace wsol
