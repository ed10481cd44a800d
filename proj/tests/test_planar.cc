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

#include "demfit/planar.h"

#include <cmath>

#include "demfit/codegen.h"
#include "demfit/logspace.h"
#include "demfit/oracle.h"
#include "doctest.h"
#include "test_util.h"

using namespace demfit;

TEST_CASE("Kac-Ward closed forms") {
    DualSpinGraph g;
    g.vertices = {{0, 0}, {1, 0}};
    g.edges.push_back({0, 1, 0, 0.0});
    SUBCASE("single edge at J=0") {
        auto res = kac_ward_log_partition(g);
        CHECK(res.log_z == doctest::Approx(2 * std::log(2.0)).epsilon(1e-14));
    }
    SUBCASE("single edge at general J") {
        for (double j : {-1.5, -0.3, 0.7, 2.0}) {
            g.edges[0].coupling = j;
            auto res = kac_ward_log_partition(g);
            CHECK(res.log_z == doctest::Approx(std::log(4 * std::cosh(j))).epsilon(1e-13));
        }
    }
}

TEST_CASE("Kac-Ward with all J=0 gives V log 2") {
    auto g = testing::random_planar_graph(3, 4, 3, 0.8, 0.0, 0.0);
    auto res = kac_ward_log_partition(g);
    CHECK(res.log_z == doctest::Approx(12.0 * std::log(2.0)).epsilon(1e-13));
}

TEST_CASE("Kac-Ward matches brute enumeration on random planar graphs") {
    int checked = 0;
    for (uint64_t seed = 0; seed < 40; seed++) {
        size_t w = 2 + seed % 3;
        size_t h = 2 + (seed / 3) % 3;
        if (w * h > 14) {
            continue;
        }
        auto g = testing::random_planar_graph(seed, w, h);
        g.validate();
        double expect = oracle::brute_partition(g);
        auto res = kac_ward_log_partition(g);
        CHECK(res.log_z == doctest::Approx(expect).epsilon(1e-11));
        checked++;
    }
    CHECK(checked >= 20);
}

TEST_CASE("Kac-Ward gradient matches finite differences on random graphs") {
    for (uint64_t seed = 0; seed < 6; seed++) {
        auto g = testing::random_planar_graph(seed + 100, 3, 3, 0.85);
        auto res = kac_ward_log_partition(g, FixLogical::kFree, true);
        REQUIRE(res.grad_j.size() == g.edges.size());
        for (size_t k = 0; k < g.edges.size(); k++) {
            double h = 1e-6;
            DualSpinGraph gp = g;
            gp.edges[k].coupling += h;
            DualSpinGraph gm = g;
            gm.edges[k].coupling -= h;
            double fd = (kac_ward_log_partition(gp).log_z - kac_ward_log_partition(gm).log_z) / (2 * h);
            CHECK(res.grad_j[k] == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("dual graph construction on the repetition layout") {
    auto model = generate_repetition_dem(3, 5, 0.01);
    size_t n = model.n_mechanisms();
    size_t m = model.n_detectors;
    REQUIRE(m == 12);
    auto theta = model.priors();

    SUBCASE("uniform theta=0.5 gives all-zero couplings") {
        std::vector<double> half(n, 0.5);
        auto g = build_dual_graph(model, ErrorConfig(n), half);
        for (const auto &e : g.edges) {
            CHECK(e.coupling == doctest::Approx(0.0));
        }
    }

    SUBCASE("error bits flip coupling signs, magnitude unchanged") {
        ErrorConfig e(n);
        e.set(3, true);
        auto g0 = build_dual_graph(model, ErrorConfig(n), theta);
        auto g1 = build_dual_graph(model, e, theta);
        for (size_t k = 0; k < g0.edges.size(); k++) {
            if (g0.edges[k].mechanism == 3) {
                CHECK(g1.edges[k].coupling == doctest::Approx(-g0.edges[k].coupling));
            } else {
                CHECK(g1.edges[k].coupling == doctest::Approx(g0.edges[k].coupling));
            }
        }
    }

    SUBCASE("counts follow Euler's formula") {
        auto g = build_dual_graph(model, ErrorConfig(n), theta);
        CHECK(g.edges.size() == n);
        CHECK(g.n_vertices() == n - m + 1);
        CHECK(g.logical_spin != kNoSpin);
        CHECK(g.auxiliary_spin != kNoSpin);
        g.validate();
    }
}

TEST_CASE("single-mechanism model: log_prob matches hand values") {
    DetectorErrorModel model;
    model.n_detectors = 1;
    model.mechanisms.push_back({0.1, {0}, true});
    model.detector_coords = {{0.0, 0.0}};
    model.canonicalize();
    auto theta = model.priors();

    BitVec s0(1);
    CHECK(log_prob_planar(model, theta, s0) == doctest::Approx(std::log(0.9)).epsilon(1e-12));
    BitVec s1(1);
    s1.set(0, true);
    CHECK(log_prob_planar(model, theta, s1) == doctest::Approx(std::log(0.1)).epsilon(1e-12));
}

TEST_CASE("planar likelihood matches the oracle on small repetition codes") {
    for (auto [d, r] : {std::pair{3, 1}, {3, 2}, {3, 3}, {5, 1}}) {
        auto model = generate_repetition_dem(d, r, 0.02);
        auto theta = testing::random_priors(7 * d + r, model.n_mechanisms(), 0.01, 0.2);
        PlanarSolver solver(model);
        for (uint64_t seed = 0; seed < 25; seed++) {
            // Sample syndromes that actually occur.
            ErrorConfig e(model.n_mechanisms());
            auto rng = make_rng(derive_seed(seed, d, r));
            for (size_t i = 0; i < e.n; i++) {
                e.set(i, bernoulli(rng, 0.2));
            }
            BitVec s = syndrome_of(model, e).syndrome;
            double expect = oracle::char_sum_prob(model, theta, s);
            double got = solver.log_prob(theta, s);
            CHECK(got == doctest::Approx(std::log(expect)).epsilon(1e-10));
            if (model.n_mechanisms() <= 24) {
                CHECK(std::exp(got) == doctest::Approx(oracle::brute_prob(model, theta, s)).epsilon(1e-10));
            }
        }
    }
}

TEST_CASE("planar normalization over all syndromes at m=12") {
    auto model = generate_repetition_dem(3, 5, 0.004);
    auto theta = model.priors();
    PlanarSolver solver(model);
    CompensatedSum total;
    for (uint32_t key = 0; key < (1u << 12); key++) {
        BitVec s(12);
        for (size_t d = 0; d < 12; d++) {
            s.set(d, (key >> d) & 1);
        }
        total.add(std::exp(solver.log_prob(theta, s)));
    }
    CHECK(total.value() == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("pure-error gauge invariance") {
    auto model = generate_repetition_dem(3, 3, 0.03);
    size_t n = model.n_mechanisms();
    auto theta = testing::random_priors(42, n, 0.02, 0.3);
    PureErrorSolver pure(model);
    auto rng = make_rng(8);
    for (int trial = 0; trial < 10; trial++) {
        ErrorConfig e(n);
        for (size_t i = 0; i < n; i++) {
            e.set(i, bernoulli(rng, 0.25));
        }
        BitVec s = syndrome_of(model, e).syndrome;
        // Two different valid reference errors for the same syndrome: the
        // sampled configuration itself and the canonical GF(2) solution.
        auto g1 = build_dual_graph(model, e, theta);
        auto g2 = build_dual_graph(model, pure.solve(s), theta);
        double z1 = kac_ward_log_partition(g1).log_z;
        double z2 = kac_ward_log_partition(g2).log_z;
        CHECK(z1 == doctest::Approx(z2).epsilon(1e-10));
    }
}

TEST_CASE("coset split: Z(free) = Z(+1) + Z(-1) and matches brute enumeration") {
    auto model = generate_repetition_dem(3, 2, 0.03);
    size_t n = model.n_mechanisms();
    auto theta = testing::random_priors(3, n, 0.02, 0.25);
    PlanarSolver solver(model);
    auto rng = make_rng(21);
    for (int trial = 0; trial < 8; trial++) {
        ErrorConfig e(n);
        for (size_t i = 0; i < n; i++) {
            e.set(i, bernoulli(rng, 0.3));
        }
        BitVec s = syndrome_of(model, e).syndrome;
        auto g = solver.graph_for(theta, s);
        REQUIRE(g.n_vertices() <= 20);
        auto free = kac_ward_log_partition(g, FixLogical::kFree);
        auto plus = kac_ward_log_partition(g, FixLogical::kPlus);
        auto minus = kac_ward_log_partition(g, FixLogical::kMinus);
        CHECK(log_add(plus.log_z, minus.log_z) == doctest::Approx(free.log_z).epsilon(1e-10));
        CHECK(plus.log_z == doctest::Approx(oracle::brute_partition(g, FixLogical::kPlus)).epsilon(1e-9));
        CHECK(minus.log_z == doctest::Approx(oracle::brute_partition(g, FixLogical::kMinus)).epsilon(1e-9));
        CHECK(free.log_z == doctest::Approx(oracle::brute_partition(g, FixLogical::kFree)).epsilon(1e-10));
    }
}

TEST_CASE("planar gradient matches finite differences") {
    auto model = generate_repetition_dem(3, 2, 0.05);
    size_t n = model.n_mechanisms();
    REQUIRE(n <= 18);
    auto theta = testing::random_priors(5, n, 0.03, 0.3);
    PlanarSolver solver(model);
    auto rng = make_rng(31);
    for (int trial = 0; trial < 4; trial++) {
        ErrorConfig e(n);
        for (size_t i = 0; i < n; i++) {
            e.set(i, bernoulli(rng, 0.3));
        }
        BitVec s = syndrome_of(model, e).syndrome;
        std::vector<double> grad;
        solver.log_prob_with_grad(theta, s, &grad);
        auto fd = oracle::fd_grad(
            [&](std::span<const double> t) {
                return solver.log_prob(std::vector<double>(t.begin(), t.end()), s);
            },
            theta);
        for (size_t i = 0; i < n; i++) {
            CHECK(grad[i] == doctest::Approx(fd[i]).epsilon(1e-5));
        }
    }
}

TEST_CASE("single mechanism gradient: d log p / d theta = 1/theta at s=1") {
    DetectorErrorModel model;
    model.n_detectors = 1;
    model.mechanisms.push_back({0.1, {0}, true});
    model.detector_coords = {{0.0, 0.0}};
    model.canonicalize();
    BitVec s1(1);
    s1.set(0, true);
    double lp = 0.0;
    auto grad = grad_log_prob_planar(model, model.priors(), s1, &lp);
    CHECK(grad[0] == doctest::Approx(1.0 / 0.1).epsilon(1e-10));
    CHECK(lp == doctest::Approx(std::log(0.1)).epsilon(1e-12));
}

TEST_CASE("detached logical-only mechanisms do not disturb the likelihood") {
    auto model = generate_repetition_dem(3, 2, 0.04);
    model.mechanisms.push_back({0.3, {}, true});
    model.canonicalize();
    size_t n = model.n_mechanisms();
    auto theta = model.priors();
    PlanarSolver solver(model);
    BitVec s = testing::random_syndrome(9, model.n_detectors);
    // Use a reachable syndrome.
    ErrorConfig e(n);
    e.set(0, true);
    e.set(2, true);
    s = syndrome_of(model, e).syndrome;
    double got = solver.log_prob(theta, s);
    double expect = oracle::char_sum_prob(model, theta, s);
    CHECK(got == doctest::Approx(std::log(expect)).epsilon(1e-10));
    std::vector<double> grad;
    solver.log_prob_with_grad(theta, s, &grad);
    CHECK(grad.back() == 0.0);
}

TEST_CASE("non-graphlike models are rejected by the planar path") {
    DetectorErrorModel model;
    model.n_detectors = 3;
    model.mechanisms.push_back({0.1, {0, 1, 2}, false});
    model.detector_coords = {{0, 0}, {1, 0}, {0, 1}};
    model.canonicalize();
    CHECK_THROWS_AS(
        build_dual_graph(model, ErrorConfig(1), model.priors()), std::runtime_error);
}
