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

#ifndef DEMFIT_DECODE_H
#define DEMFIT_DECODE_H

#include <optional>
#include <string>
#include <vector>

#include "demfit/contract.h"
#include "demfit/dem.h"
#include "demfit/mle.h"

namespace demfit {

struct DecodeResult {
    BitVec predicted;              // one bit per shot; 1 = logical flip
    std::vector<double> log_odds;  // log(p0/p1); +-inf allowed
    size_t ties = 0;               // exact p0 == p1 cases, resolved toward 0
};

// Exact maximum-likelihood decoding of a graphlike planar model: the two
// coset partition functions are compared via the conditioned Kac-Ward
// evaluations.
DecodeResult decode_planar(
    const DetectorErrorModel &model,
    const std::vector<double> &theta,
    const ShotBatch &batch,
    int threads = 1);

// Exact maximum-likelihood decoding of a general model: the sign of the
// decoder-network contraction picks the coset, and the companion likelihood
// contraction turns it into log odds.
DecodeResult decode_tn(
    const DetectorErrorModel &model,
    const std::vector<double> &theta,
    const ShotBatch &batch,
    const SaConfig &sa = {},
    size_t checkpoint_elems = size_t{1} << 24);

struct LerReport {
    size_t shots = 0;
    size_t failures = 0;
    double ler = 0.0;
    double wilson_low = 0.0;
    double wilson_high = 0.0;
    std::optional<double> per_round;  // P_L = (1 - (1-2*ler)^{1/r}) / 2
    size_t ties = 0;
    std::vector<std::string> warnings;
    std::string to_json() const;
};

// Compares decoder predictions against recorded logical labels; the
// per-round rate uses the model's round count from metadata when present.
LerReport evaluate_ler(
    const DetectorErrorModel &model,
    const std::vector<double> &theta,
    const ShotBatch &batch,
    Backend decoder,
    const SaConfig &sa = {},
    int threads = 1);

}  // namespace demfit

#endif
