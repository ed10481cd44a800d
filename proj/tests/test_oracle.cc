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

#include "demfit/oracle.h"

#include <cmath>

#include "demfit/codegen.h"
#include "demfit/logspace.h"
#include "doctest.h"
#include "test_util.h"

using namespace demfit;

TEST_CASE("brute_prob on a single mechanism") {
    DetectorErrorModel model;
    model.n_detectors = 2;
    model.mechanisms.push_back({0.1, {0, 1}, false});
    model.canonicalize();
    auto theta = model.priors();

    BitVec s(2);
    CHECK(oracle::brute_prob(model, theta, s) == doctest::Approx(0.9).epsilon(1e-14));
    s.set(0, true);
    s.set(1, true);
    CHECK(oracle::brute_prob(model, theta, s) == doctest::Approx(0.1).epsilon(1e-14));
}

TEST_CASE("brute_prob sums to one and matches the character sum") {
    for (uint64_t seed = 0; seed < 8; seed++) {
        auto model = testing::random_dem(seed, 5, 9);
        auto theta = model.priors();
        CompensatedSum total;
        for (uint32_t key = 0; key < (1u << model.n_detectors); key++) {
            BitVec s(model.n_detectors);
            for (size_t d = 0; d < model.n_detectors; d++) {
                s.set(d, (key >> d) & 1);
            }
            double p = oracle::brute_prob(model, theta, s);
            double q = oracle::char_sum_prob(model, theta, s);
            CHECK(p == doctest::Approx(q).epsilon(1e-12));
            total.add(p);
        }
        CHECK(total.value() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("char_sum_all_probs agrees with per-syndrome character sums") {
    auto model = testing::random_dem(3, 6, 12);
    auto theta = model.priors();
    auto all = oracle::char_sum_all_probs(model, theta);
    REQUIRE(all.size() == (size_t{1} << model.n_detectors));
    for (uint32_t key = 0; key < all.size(); key += 7) {
        BitVec s(model.n_detectors);
        for (size_t d = 0; d < model.n_detectors; d++) {
            s.set(d, (key >> d) & 1);
        }
        CHECK(all[key] == doctest::Approx(oracle::char_sum_prob(model, theta, s)).epsilon(1e-12));
    }
}

TEST_CASE("brute_log_prob tracks brute_prob in the normal range") {
    auto model = testing::random_dem(4, 5, 10);
    auto theta = model.priors();
    for (uint64_t seed = 0; seed < 10; seed++) {
        BitVec s = testing::random_syndrome(seed, model.n_detectors);
        double p = oracle::brute_prob(model, theta, s);
        double lp = oracle::brute_log_prob(model, theta, s);
        if (p > 0) {
            CHECK(lp == doctest::Approx(std::log(p)).epsilon(1e-10));
        } else {
            CHECK(lp == kNegInf);
        }
    }
}

TEST_CASE("brute_partition closed forms") {
    // Single edge: Z = 4 cosh J.
    DualSpinGraph g;
    g.vertices = {{0, 0}, {1, 0}};
    g.edges.push_back({0, 1, 0, 0.7});
    CHECK(oracle::brute_partition(g) == doctest::Approx(std::log(4 * std::cosh(0.7))).epsilon(1e-12));

    // J = 0 everywhere: Z = 2^V.
    auto grid = testing::random_planar_graph(2, 3, 3, 1.0, 0.0, 0.0);
    CHECK(
        oracle::brute_partition(grid) ==
        doctest::Approx(9.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("brute_ml_decode on hand models") {
    // No logical mechanism: p1 = 0.
    DetectorErrorModel plain;
    plain.n_detectors = 1;
    plain.mechanisms.push_back({0.2, {0}, false});
    plain.canonicalize();
    BitVec s1(1);
    s1.set(0, true);
    auto res = oracle::brute_ml_decode(plain, plain.priors(), s1);
    CHECK(res.prediction == 0);
    CHECK(res.p1 == 0.0);
    CHECK(res.p0 == doctest::Approx(0.2));

    // Single logical mechanism: s=1 implies the flip happened.
    DetectorErrorModel logical;
    logical.n_detectors = 1;
    logical.mechanisms.push_back({0.1, {0}, true});
    logical.canonicalize();
    auto res2 = oracle::brute_ml_decode(logical, logical.priors(), s1);
    CHECK(res2.prediction == 1);
    CHECK(res2.p1 == doctest::Approx(0.1));
    CHECK(res2.p0 == 0.0);
}

TEST_CASE("fd_grad recovers simple gradients") {
    auto linear = [](std::span<const double> t) {
        return t[0];
    };
    auto g1 = oracle::fd_grad(linear, {0.3, 0.4});
    CHECK(g1[0] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(g1[1] == doctest::Approx(0.0).epsilon(1e-7));

    auto constant = [](std::span<const double>) {
        return 5.0;
    };
    auto g2 = oracle::fd_grad(constant, {0.5, 0.5});
    CHECK(g2[0] == doctest::Approx(0.0));

    // Near-boundary coordinates step in logit space and stay in (0,1).
    auto prod = [](std::span<const double> t) {
        return std::log(t[0]) + std::log1p(-t[1]);
    };
    auto g3 = oracle::fd_grad(prod, {1e-7, 1.0 - 1e-7});
    CHECK(g3[0] == doctest::Approx(1.0 / 1e-7).epsilon(1e-4));
    CHECK(g3[1] == doctest::Approx(-1.0 / 1e-7).epsilon(1e-4));
}

TEST_CASE("brute_all_probs agrees with per-syndrome brute_prob") {
    auto model = testing::random_dem(12, 6, 14);
    auto theta = model.priors();
    auto all = oracle::brute_all_probs(model, theta);
    REQUIRE(all.size() == (size_t{1} << model.n_detectors));
    for (uint32_t key = 0; key < all.size(); key += 5) {
        BitVec s(model.n_detectors);
        for (size_t d = 0; d < model.n_detectors; d++) {
            s.set(d, (key >> d) & 1);
        }
        CHECK(all[key] == doctest::Approx(oracle::brute_prob(model, theta, s)).epsilon(1e-13));
    }
}
