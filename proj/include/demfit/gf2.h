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

#ifndef DEMFIT_GF2_H
#define DEMFIT_GF2_H

#include <algorithm>
#include <cstdint>
#include <cstddef>
#include <utility>
#include <vector>

namespace demfit {

// Fixed-width bit vector packed into 64-bit words. Used for syndromes,
// error configurations, and GF(2) matrix rows.
struct BitVec {
    size_t n = 0;
    std::vector<uint64_t> words;

    BitVec() = default;
    explicit BitVec(size_t n_bits) : n(n_bits), words((n_bits + 63) / 64, 0) {
    }

    bool get(size_t i) const {
        return (words[i >> 6] >> (i & 63)) & 1;
    }
    void set(size_t i, bool v) {
        uint64_t mask = uint64_t{1} << (i & 63);
        if (v) {
            words[i >> 6] |= mask;
        } else {
            words[i >> 6] &= ~mask;
        }
    }
    void flip(size_t i) {
        words[i >> 6] ^= uint64_t{1} << (i & 63);
    }
    void clear() {
        std::fill(words.begin(), words.end(), 0);
    }
    void xor_with(const BitVec &other) {
        for (size_t k = 0; k < words.size(); k++) {
            words[k] ^= other.words[k];
        }
    }
    size_t popcount() const {
        size_t c = 0;
        for (uint64_t w : words) {
            c += static_cast<size_t>(__builtin_popcountll(w));
        }
        return c;
    }
    bool any() const {
        for (uint64_t w : words) {
            if (w) {
                return true;
            }
        }
        return false;
    }
    bool operator==(const BitVec &other) const {
        return n == other.n && words == other.words;
    }
};

struct BitVecHash {
    size_t operator()(const BitVec &v) const {
        uint64_t h = 0xcbf29ce484222325ULL ^ v.n;
        for (uint64_t w : v.words) {
            h ^= w;
            h *= 0x100000001b3ULL;
            h ^= h >> 29;
        }
        return static_cast<size_t>(h);
    }
};

// Solves M x = s over GF(2) for a fixed m-by-n matrix M and many right-hand
// sides. The constructor runs one Gaussian elimination with column pivoting
// on [M | I], recording the row transform E with E*M in reduced echelon
// form; each solve is then a single E*s product plus pivot readout.
class Gf2Solver {
  public:
    Gf2Solver(size_t n_rows, size_t n_cols, const std::vector<std::pair<size_t, size_t>> &entries);

    // Returns x with M x = s and non-pivot coordinates zero.
    // Throws std::runtime_error naming an unreachable row if s is not in the
    // column span.
    BitVec solve(const BitVec &s) const;

    bool in_span(const BitVec &s) const;
    size_t rank() const {
        return pivot_cols_.size();
    }

  private:
    size_t n_rows_;
    size_t n_cols_;
    std::vector<BitVec> echelon_;           // E*M, one BitVec(n_cols) per row
    std::vector<BitVec> transform_;         // E, one BitVec(n_rows) per row
    std::vector<size_t> pivot_cols_;        // pivot column of row k, k < rank
    std::vector<size_t> row_origin_;        // original row index feeding row k
};

}  // namespace demfit

#endif
