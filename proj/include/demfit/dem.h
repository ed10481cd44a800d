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

#ifndef DEMFIT_DEM_H
#define DEMFIT_DEM_H

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "demfit/gf2.h"

namespace demfit {

// Mechanism probabilities are clamped into this range on load so that the
// log/logit maps stay finite.
constexpr double kMinMechanismProb = 1e-9;
constexpr double kMaxMechanismProb = 1.0 - 1e-9;

// One independent error mechanism: fires with probability `prob`, toggles
// every detector in `detectors`, and optionally flips the logical observable.
struct ErrorMechanism {
    double prob = 0.0;
    std::vector<uint32_t> detectors;  // sorted, deduplicated
    bool flips_logical = false;

    bool same_effect(const ErrorMechanism &other) const {
        return detectors == other.detectors && flips_logical == other.flips_logical;
    }
};

// Hypergraph of independent binary error mechanisms over a set of detectors
// and a single logical observable. Immutable after construction by
// convention; solvers and samplers share models read-only.
struct DetectorErrorModel {
    size_t n_detectors = 0;
    std::vector<ErrorMechanism> mechanisms;
    // Either empty or one coordinate tuple per detector. By convention the
    // last coordinate is the round index.
    std::vector<std::vector<double>> detector_coords;
    std::map<std::string, std::string> metadata;

    size_t n_mechanisms() const {
        return mechanisms.size();
    }
    std::vector<double> priors() const;
    void set_priors(const std::vector<double> &theta);
    bool is_graphlike() const;  // every mechanism touches <= 2 detectors
    // Round coordinate (last coordinate) per detector; throws if coords absent.
    double detector_round(size_t detector) const;

    // Merges duplicate mechanisms, sorts detector lists, drops no-op
    // mechanisms, clamps probabilities. Parse and the generators call this;
    // call it again after editing mechanisms by hand.
    void canonicalize(std::vector<std::string> *warnings = nullptr);
};

// A concrete error configuration e in {0,1}^n.
using ErrorConfig = BitVec;

// N recorded shots: one m-bit detection-event row per shot, plus optional
// logical flip labels.
struct ShotBatch {
    size_t n_detectors = 0;
    size_t n_shots = 0;
    std::vector<uint64_t> words;  // row-major, words_per_shot() per row
    std::optional<BitVec> logical_flips;

    size_t words_per_shot() const {
        return (n_detectors + 63) / 64;
    }
    void reserve(size_t shots) {
        words.reserve(shots * words_per_shot());
    }
    void append(const BitVec &syndrome);
    BitVec row(size_t shot) const;
    bool get(size_t shot, size_t detector) const {
        size_t i = shot * words_per_shot() + (detector >> 6);
        return (words[i] >> (detector & 63)) & 1;
    }
};

// ---- Parsing and serialization -------------------------------------------

// Parses the flat DEM text grammar:
//   error(<p>) D<i> ... L0
//   detector(<coords,...>) D<i>      (coords optional: `detector D<i>`)
//   logical_observable L0
//   repeat <N> { ... }               (unrolled on load)
//   shift_detectors(<coords,...>) <k>
//   # comment                        (`#!meta key value` round-trips metadata)
// Throws std::runtime_error with a line number on syntax errors. Warnings
// (dropped zero-probability lines, detector index gaps) are appended to
// `warnings` when provided.
DetectorErrorModel parse_dem(std::string_view text, std::vector<std::string> *warnings = nullptr);
DetectorErrorModel parse_dem_file(const std::string &path, std::vector<std::string> *warnings = nullptr);

// Inverse of parse_dem; probabilities are printed with 17 significant digits
// so that parse(serialize(m)) round-trips exactly.
std::string serialize_dem(const DetectorErrorModel &model);
void write_dem_file(const DetectorErrorModel &model, const std::string &path);

// ---- Syndrome map ---------------------------------------------------------

struct SyndromeResult {
    BitVec syndrome;
    bool logical = false;
};

// s_j = XOR of e_i over mechanisms i touching detector j;
// logical = XOR of e_i over mechanisms flipping the observable.
SyndromeResult syndrome_of(const DetectorErrorModel &model, const ErrorConfig &e);

// ---- Sampling -------------------------------------------------------------

// Draws each e_i ~ Bernoulli(theta_i) independently per shot and records the
// resulting detection events and logical flips. Deterministic given `seed`
// and independent of `threads`.
ShotBatch sample_shots(const DetectorErrorModel &model, size_t n_shots, uint64_t seed, int threads = 1);

// ---- Pure errors ----------------------------------------------------------

// Factorizes the m-by-n GF(2) incidence matrix once; solve() is then cheap
// per syndrome, which is what repetition-code preprocessing at millions of
// shots needs.
class PureErrorSolver {
  public:
    explicit PureErrorSolver(const DetectorErrorModel &model);

    // Returns any e with syndrome_of(e).syndrome == s (zero bits preferred).
    ErrorConfig solve(const BitVec &syndrome) const;
    bool in_span(const BitVec &syndrome) const {
        return solver_->in_span(syndrome);
    }

  private:
    std::unique_ptr<Gf2Solver> solver_;
};

ErrorConfig pure_error(const DetectorErrorModel &model, const BitVec &syndrome);

// ---- Shot file formats ----------------------------------------------------

enum class ShotFormat {
    kText01,  // one line of m '0'/'1' characters per shot
    kPackedB8,  // ceil(m/8) bytes per shot, bit (j%8) of byte j/8, LSB first
};

ShotFormat parse_shot_format(std::string_view name);

void write_shots(const ShotBatch &batch, const std::string &path, ShotFormat format);
ShotBatch read_shots(const std::string &path, ShotFormat format, size_t n_detectors);

// Label files reuse the shot formats with one bit per shot.
void write_labels(const BitVec &labels, const std::string &path, ShotFormat format);
BitVec read_labels(const std::string &path, ShotFormat format);

}  // namespace demfit

#endif
