// Copyright 2026 Demfit Contributors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DEMFIT_RNG_H
#define DEMFIT_RNG_H

#include <cmath>
#include <cstdint>
#include <random>

namespace demfit {

// Mixes a seed with stream identifiers so that independent consumers
// (worker chunks, mechanisms, SA chains) get decorrelated generators that
// do not depend on thread count.
inline uint64_t split_mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    return split_mix64(split_mix64(seed) ^ split_mix64(stream * 0xd1342543de82ef95ULL + 1));
}

inline uint64_t derive_seed(uint64_t seed, uint64_t stream_a, uint64_t stream_b) {
    return derive_seed(derive_seed(seed, stream_a), stream_b);
}

inline std::mt19937_64 make_rng(uint64_t seed) {
    return std::mt19937_64(split_mix64(seed ^ 0x6a09e667f3bcc909ULL));
}

// Uniform in [0, 1). Implemented directly from raw bits so results do not
// depend on the standard library's distribution internals.
inline double uniform_double(std::mt19937_64 &rng) {
    return (rng() >> 11) * 0x1.0p-53;
}

// Uniform in [lo, hi).
inline double uniform_double(std::mt19937_64 &rng, double lo, double hi) {
    return lo + (hi - lo) * uniform_double(rng);
}

inline bool bernoulli(std::mt19937_64 &rng, double p) {
    return uniform_double(rng) < p;
}

// Uniform integer in [0, n).
inline uint64_t uniform_index(std::mt19937_64 &rng, uint64_t n) {
    // Rejection-free modulo bias is negligible for n << 2^64; use Lemire-style
    // multiply-shift which is exact enough and deterministic.
    return static_cast<uint64_t>((static_cast<__uint128_t>(rng()) * n) >> 64);
}

// Number of failures before the next success for a Bernoulli(p) sequence.
// Used for skip-sampling sparse error configurations.
inline uint64_t geometric_skip(std::mt19937_64 &rng, double p) {
    if (p >= 1.0) {
        return 0;
    }
    double u = uniform_double(rng);
    if (u <= 0.0) {
        u = 0x1.0p-53;
    }
    double g = std::log(u) / std::log1p(-p);
    if (g >= 9e18) {
        return UINT64_MAX;
    }
    return static_cast<uint64_t>(g);
}

}  // namespace demfit

#endif
