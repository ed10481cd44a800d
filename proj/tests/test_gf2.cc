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

#include "demfit/gf2.h"

#include <random>

#include "demfit/rng.h"
#include "doctest.h"

using namespace demfit;

TEST_CASE("BitVec basics") {
    BitVec v(130);
    CHECK(!v.any());
    v.set(0, true);
    v.set(129, true);
    v.flip(64);
    CHECK(v.get(0));
    CHECK(v.get(64));
    CHECK(v.get(129));
    CHECK(v.popcount() == 3);
    BitVec w(130);
    w.set(64, true);
    v.xor_with(w);
    CHECK(!v.get(64));
    CHECK(v.popcount() == 2);
}

TEST_CASE("Gf2Solver solves random consistent systems") {
    auto rng = make_rng(17);
    for (int trial = 0; trial < 50; trial++) {
        size_t rows = 3 + uniform_index(rng, 20);
        size_t cols = 3 + uniform_index(rng, 30);
        std::vector<std::pair<size_t, size_t>> entries;
        std::vector<BitVec> columns(cols, BitVec(rows));
        for (size_t c = 0; c < cols; c++) {
            for (size_t r = 0; r < rows; r++) {
                if (bernoulli(rng, 0.3)) {
                    entries.emplace_back(r, c);
                    columns[c].flip(r);
                }
            }
        }
        Gf2Solver solver(rows, cols, entries);
        // Build a right-hand side from a random x, solve, re-multiply.
        BitVec x(cols);
        for (size_t c = 0; c < cols; c++) {
            x.set(c, bernoulli(rng, 0.5));
        }
        BitVec s(rows);
        for (size_t c = 0; c < cols; c++) {
            if (x.get(c)) {
                s.xor_with(columns[c]);
            }
        }
        REQUIRE(solver.in_span(s));
        BitVec y = solver.solve(s);
        BitVec s2(rows);
        for (size_t c = 0; c < cols; c++) {
            if (y.get(c)) {
                s2.xor_with(columns[c]);
            }
        }
        CHECK(s2 == s);
    }
}

TEST_CASE("Gf2Solver zero syndrome gives zero solution") {
    std::vector<std::pair<size_t, size_t>> entries = {{0, 0}, {1, 0}, {1, 1}, {2, 1}};
    Gf2Solver solver(3, 2, entries);
    BitVec s(3);
    BitVec x = solver.solve(s);
    CHECK(!x.any());
}

TEST_CASE("Gf2Solver reports unreachable syndromes") {
    // Single column touching rows 0 and 1; row 2 is unreachable.
    std::vector<std::pair<size_t, size_t>> entries = {{0, 0}, {1, 0}};
    Gf2Solver solver(3, 1, entries);
    BitVec s(3);
    s.set(2, true);
    CHECK(!solver.in_span(s));
    CHECK_THROWS_WITH_AS(solver.solve(s), doctest::Contains("D2"), std::runtime_error);
}
