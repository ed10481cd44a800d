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

#ifndef DEMFIT_LOGSPACE_H
#define DEMFIT_LOGSPACE_H

#include <cmath>
#include <limits>
#include <span>
#include <utility>

namespace demfit {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(exp(a) + exp(b)) without overflow.
inline double log_add(double a, double b) {
    if (a < b) {
        std::swap(a, b);
    }
    if (b == kNegInf) {
        return a;
    }
    return a + std::log1p(std::exp(b - a));
}

// log(exp(a) - exp(b)) for a >= b. Returns -inf when they cancel exactly.
inline double log_sub(double a, double b) {
    if (b == kNegInf) {
        return a;
    }
    double d = -std::expm1(b - a);
    if (d <= 0.0) {
        return kNegInf;
    }
    return a + std::log(d);
}

inline double log_sum_exp(std::span<const double> xs) {
    double m = kNegInf;
    for (double x : xs) {
        if (x > m) {
            m = x;
        }
    }
    if (m == kNegInf) {
        return kNegInf;
    }
    double acc = 0.0;
    for (double x : xs) {
        acc += std::exp(x - m);
    }
    return m + std::log(acc);
}

// Kahan-compensated accumulator for long probability sums.
struct CompensatedSum {
    double sum = 0.0;
    double carry = 0.0;

    void add(double x) {
        double y = x - carry;
        double t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }

    double value() const {
        return sum;
    }
};

}  // namespace demfit

#endif
