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

#ifndef DEMFIT_TESTS_TEST_UTIL_H
#define DEMFIT_TESTS_TEST_UTIL_H

#include <random>
#include <vector>

#include "demfit/dem.h"
#include "demfit/planar.h"
#include "demfit/rng.h"

namespace demfit {
namespace testing {

// Random planar straight-line graph: a W x H grid with one random diagonal
// per cell, each edge kept independently. Always crossing-free, vertices
// keep their lattice coordinates. Mechanism ids are the edge indices.
inline DualSpinGraph random_planar_graph(
    uint64_t seed, size_t width, size_t height, double keep_prob = 0.75,
    double j_lo = -2.0, double j_hi = 2.0) {
    auto rng = make_rng(seed);
    DualSpinGraph g;
    for (size_t y = 0; y < height; y++) {
        for (size_t x = 0; x < width; x++) {
            g.vertices.push_back({static_cast<double>(x), static_cast<double>(y)});
        }
    }
    auto vid = [&](size_t x, size_t y) {
        return static_cast<uint32_t>(y * width + x);
    };
    auto maybe_edge = [&](uint32_t u, uint32_t v) {
        if (uniform_double(rng) < keep_prob) {
            SpinEdge e;
            e.u = u;
            e.v = v;
            e.mechanism = static_cast<uint32_t>(g.edges.size());
            e.coupling = uniform_double(rng, j_lo, j_hi);
            g.edges.push_back(e);
        }
    };
    for (size_t y = 0; y < height; y++) {
        for (size_t x = 0; x < width; x++) {
            if (x + 1 < width) {
                maybe_edge(vid(x, y), vid(x + 1, y));
            }
            if (y + 1 < height) {
                maybe_edge(vid(x, y), vid(x, y + 1));
            }
            if (x + 1 < width && y + 1 < height) {
                // One diagonal per cell, random orientation.
                if (uniform_double(rng) < 0.5) {
                    maybe_edge(vid(x, y), vid(x + 1, y + 1));
                } else {
                    maybe_edge(vid(x + 1, y), vid(x, y + 1));
                }
            }
        }
    }
    return g;
}

// Small random hypergraph DEM for oracle-vs-backend checks.
inline DetectorErrorModel random_dem(
    uint64_t seed, size_t n_detectors, size_t n_mechanisms, size_t max_weight = 3,
    double p_lo = 0.01, double p_hi = 0.3, bool with_logical = true) {
    auto rng = make_rng(seed);
    DetectorErrorModel model;
    model.n_detectors = n_detectors;
    for (size_t i = 0; i < n_mechanisms; i++) {
        ErrorMechanism mech;
        mech.prob = uniform_double(rng, p_lo, p_hi);
        size_t w = 1 + uniform_index(rng, max_weight);
        for (size_t k = 0; k < w; k++) {
            mech.detectors.push_back(static_cast<uint32_t>(uniform_index(rng, n_detectors)));
        }
        mech.flips_logical = with_logical && bernoulli(rng, 0.3);
        model.mechanisms.push_back(std::move(mech));
    }
    model.canonicalize();
    return model;
}

// Random priors in (lo, hi).
inline std::vector<double> random_priors(uint64_t seed, size_t n, double lo = 0.02, double hi = 0.4) {
    auto rng = make_rng(seed);
    std::vector<double> theta(n);
    for (auto &t : theta) {
        t = uniform_double(rng, lo, hi);
    }
    return theta;
}

inline BitVec random_syndrome(uint64_t seed, size_t m) {
    auto rng = make_rng(seed);
    BitVec s(m);
    for (size_t d = 0; d < m; d++) {
        s.set(d, bernoulli(rng, 0.5));
    }
    return s;
}

}  // namespace testing
}  // namespace demfit

#endif
