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

#include <algorithm>
#include <stdexcept>
#include <string>

namespace demfit {

Gf2Solver::Gf2Solver(
    size_t n_rows, size_t n_cols, const std::vector<std::pair<size_t, size_t>> &entries)
    : n_rows_(n_rows), n_cols_(n_cols) {
    std::vector<BitVec> rows(n_rows, BitVec(n_cols));
    for (const auto &[r, c] : entries) {
        rows[r].flip(c);
    }
    std::vector<BitVec> eye(n_rows, BitVec(n_rows));
    std::vector<size_t> origin(n_rows);
    for (size_t r = 0; r < n_rows; r++) {
        eye[r].set(r, true);
        origin[r] = r;
    }

    size_t pivot_row = 0;
    for (size_t col = 0; col < n_cols && pivot_row < n_rows; col++) {
        size_t src = pivot_row;
        while (src < n_rows && !rows[src].get(col)) {
            src++;
        }
        if (src == n_rows) {
            continue;
        }
        std::swap(rows[src], rows[pivot_row]);
        std::swap(eye[src], eye[pivot_row]);
        std::swap(origin[src], origin[pivot_row]);
        for (size_t r = 0; r < n_rows; r++) {
            if (r != pivot_row && rows[r].get(col)) {
                rows[r].xor_with(rows[pivot_row]);
                eye[r].xor_with(eye[pivot_row]);
            }
        }
        pivot_cols_.push_back(col);
        pivot_row++;
    }

    echelon_ = std::move(rows);
    transform_ = std::move(eye);
    row_origin_ = std::move(origin);
}

BitVec Gf2Solver::solve(const BitVec &s) const {
    if (s.n != n_rows_) {
        throw std::invalid_argument(
            "syndrome has " + std::to_string(s.n) + " bits, matrix has " +
            std::to_string(n_rows_) + " rows");
    }
    BitVec x(n_cols_);
    size_t rank = pivot_cols_.size();
    for (size_t k = 0; k < n_rows_; k++) {
        // t_k = <E row k, s>
        uint64_t acc = 0;
        const auto &tw = transform_[k].words;
        for (size_t w = 0; w < tw.size(); w++) {
            acc ^= tw[w] & s.words[w];
        }
        bool bit = __builtin_popcountll(acc) & 1;
        if (k < rank) {
            if (bit) {
                x.set(pivot_cols_[k], true);
            }
        } else if (bit) {
            // Inconsistent system: the combination E[k] of detectors has odd
            // parity but no mechanism can produce it. Name one of them.
            for (size_t d = 0; d < n_rows_; d++) {
                if (transform_[k].get(d)) {
                    throw std::runtime_error(
                        "syndrome not reachable: detector D" + std::to_string(d) +
                        " participates in an unsatisfiable parity constraint");
                }
            }
            throw std::runtime_error("syndrome not reachable");
        }
    }
    return x;
}

bool Gf2Solver::in_span(const BitVec &s) const {
    size_t rank = pivot_cols_.size();
    for (size_t k = rank; k < n_rows_; k++) {
        uint64_t acc = 0;
        const auto &tw = transform_[k].words;
        for (size_t w = 0; w < tw.size(); w++) {
            acc ^= tw[w] & s.words[w];
        }
        if (__builtin_popcountll(acc) & 1) {
            return false;
        }
    }
    return true;
}

}  // namespace demfit
