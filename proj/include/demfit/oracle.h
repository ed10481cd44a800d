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

#ifndef DEMFIT_ORACLE_H
#define DEMFIT_ORACLE_H

// Brute-force reference implementations. These are deliberately written
// without sharing any code with the production solvers: independent parity
// bookkeeping, independent probability accumulation. They back the `verify`
// CLI command and the test suites.

#include <functional>
#include <span>
#include <vector>

#include "demfit/dem.h"
#include "demfit/planar.h"

namespace demfit {
namespace oracle {

// p_theta(s) by enumeration of all 2^n error configurations, accumulated
// with compensated summation. Requires n <= 24.
double brute_prob(
    const DetectorErrorModel &model, const std::vector<double> &theta, const BitVec &syndrome);

// Same sum accumulated in log space, so values far below double underflow
// stay representable. Requires n <= 24.
double brute_log_prob(
    const DetectorErrorModel &model, const std::vector<double> &theta, const BitVec &syndrome);

// One 2^n enumeration pass accumulating every syndrome's probability.
// Index = syndrome bits packed with detector j at bit j. Requires n <= 24
// and m <= 26.
std::vector<double> brute_all_probs(
    const DetectorErrorModel &model, const std::vector<double> &theta);

// Closed-form character sum over the 2^m detector patterns:
//   p(s) = 2^-m sum_alpha (-1)^{alpha . s} prod_i [(1-theta_i) + theta_i (-1)^{|alpha & del_i|}].
// Independent route used to cross-check brute_prob. Requires m <= 26.
double char_sum_prob(
    const DetectorErrorModel &model, const std::vector<double> &theta, const BitVec &syndrome);

// All 2^m syndrome probabilities at once via a fast Walsh-Hadamard
// transform of the character values. Index = syndrome bits packed with
// detector j at bit j. Requires m <= 26.
std::vector<double> char_sum_all_probs(
    const DetectorErrorModel &model, const std::vector<double> &theta);

// log Z of a dual spin graph by enumeration over all 2^V spin states.
// Requires V <= 20.
double brute_partition(const DualSpinGraph &graph, FixLogical fix = FixLogical::kFree);

struct BruteDecodeResult {
    int prediction = 0;  // 0 or 1; ties break toward 0
    double p0 = 0.0;
    double p1 = 0.0;
};

// Coset sums by enumeration; prediction is the larger coset. n <= 24.
BruteDecodeResult brute_ml_decode(
    const DetectorErrorModel &model, const std::vector<double> &theta, const BitVec &syndrome);

// Central finite differences per coordinate, stepping in logit space when a
// coordinate sits too close to 0 or 1 for a plain step.
std::vector<double> fd_grad(
    const std::function<double(std::span<const double>)> &f,
    std::vector<double> theta,
    double h = 1e-6);

}  // namespace oracle
}  // namespace demfit

#endif
