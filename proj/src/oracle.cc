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
#include <stdexcept>
#include <string>

#include "demfit/logspace.h"

namespace demfit {
namespace oracle {

namespace {

void check_counts(const DetectorErrorModel &model, const BitVec &syndrome) {
    if (syndrome.n != model.n_detectors) {
        throw std::invalid_argument("syndrome width does not match model");
    }
}

// Detector and logical signature of one error configuration, recomputed
// from scratch (no shared code with syndrome_of).
uint64_t config_signature(const DetectorErrorModel &model, uint32_t config, bool *logical) {
    uint64_t sig = 0;
    bool l = false;
    for (size_t i = 0; i < model.mechanisms.size(); i++) {
        if ((config >> i) & 1) {
            for (uint32_t d : model.mechanisms[i].detectors) {
                sig ^= uint64_t{1} << d;
            }
            l ^= model.mechanisms[i].flips_logical;
        }
    }
    *logical = l;
    return sig;
}

double config_probability(const std::vector<double> &theta, uint32_t config, size_t n) {
    double p = 1.0;
    for (size_t i = 0; i < n; i++) {
        p *= ((config >> i) & 1) ? theta[i] : (1.0 - theta[i]);
    }
    return p;
}

double config_log_probability(const std::vector<double> &theta, uint32_t config, size_t n) {
    double lp = 0.0;
    for (size_t i = 0; i < n; i++) {
        lp += std::log(((config >> i) & 1) ? theta[i] : (1.0 - theta[i]));
    }
    return lp;
}

uint64_t syndrome_key(const BitVec &syndrome) {
    uint64_t key = 0;
    for (size_t d = 0; d < syndrome.n; d++) {
        if (syndrome.get(d)) {
            key |= uint64_t{1} << d;
        }
    }
    return key;
}

}  // namespace

double brute_prob(
    const DetectorErrorModel &model, const std::vector<double> &theta, const BitVec &syndrome) {
    check_counts(model, syndrome);
    size_t n = model.n_mechanisms();
    if (n > 24) {
        throw std::invalid_argument("brute_prob requires n <= 24, got " + std::to_string(n));
    }
    if (model.n_detectors > 64) {
        throw std::invalid_argument("brute_prob requires m <= 64");
    }
    uint64_t target = syndrome_key(syndrome);
    CompensatedSum total;
    for (uint32_t config = 0; config < (uint32_t{1} << n); config++) {
        bool logical = false;
        if (config_signature(model, config, &logical) == target) {
            total.add(config_probability(theta, config, n));
        }
    }
    return total.value();
}

double brute_log_prob(
    const DetectorErrorModel &model, const std::vector<double> &theta, const BitVec &syndrome) {
    check_counts(model, syndrome);
    size_t n = model.n_mechanisms();
    if (n > 24) {
        throw std::invalid_argument("brute_log_prob requires n <= 24");
    }
    if (model.n_detectors > 64) {
        throw std::invalid_argument("brute_log_prob requires m <= 64");
    }
    uint64_t target = syndrome_key(syndrome);
    double acc = kNegInf;
    for (uint32_t config = 0; config < (uint32_t{1} << n); config++) {
        bool logical = false;
        if (config_signature(model, config, &logical) == target) {
            acc = log_add(acc, config_log_probability(theta, config, n));
        }
    }
    return acc;
}

std::vector<double> brute_all_probs(
    const DetectorErrorModel &model, const std::vector<double> &theta) {
    size_t n = model.n_mechanisms();
    size_t m = model.n_detectors;
    if (n > 24) {
        throw std::invalid_argument("brute_all_probs requires n <= 24");
    }
    if (m > 26) {
        throw std::invalid_argument("brute_all_probs requires m <= 26");
    }
    std::vector<CompensatedSum> buckets(size_t{1} << m);
    for (uint32_t config = 0; config < (uint32_t{1} << n); config++) {
        bool logical = false;
        uint64_t sig = config_signature(model, config, &logical);
        buckets[sig].add(config_probability(theta, config, n));
    }
    std::vector<double> out(buckets.size());
    for (size_t key = 0; key < buckets.size(); key++) {
        out[key] = buckets[key].value();
    }
    return out;
}

namespace {

// Character value g(alpha) = prod_i [(1-theta_i) + theta_i (-1)^{|alpha & del_i|}].
std::vector<double> character_table(
    const DetectorErrorModel &model, const std::vector<double> &theta) {
    size_t m = model.n_detectors;
    if (m > 26) {
        throw std::invalid_argument("character sum requires m <= 26, got " + std::to_string(m));
    }
    size_t n = model.n_mechanisms();
    std::vector<uint32_t> masks(n, 0);
    for (size_t i = 0; i < n; i++) {
        for (uint32_t d : model.mechanisms[i].detectors) {
            masks[i] |= uint32_t{1} << d;
        }
    }
    std::vector<double> g(size_t{1} << m);
    for (uint32_t alpha = 0; alpha < (uint32_t{1} << m); alpha++) {
        double prod = 1.0;
        for (size_t i = 0; i < n; i++) {
            int parity = __builtin_popcount(alpha & masks[i]) & 1;
            prod *= parity ? (1.0 - 2.0 * theta[i]) : 1.0;
        }
        g[alpha] = prod;
    }
    return g;
}

}  // namespace

double char_sum_prob(
    const DetectorErrorModel &model, const std::vector<double> &theta, const BitVec &syndrome) {
    check_counts(model, syndrome);
    std::vector<double> g = character_table(model, theta);
    uint64_t s = syndrome_key(syndrome);
    CompensatedSum total;
    for (uint64_t alpha = 0; alpha < g.size(); alpha++) {
        int sign = __builtin_popcountll(alpha & s) & 1;
        total.add(sign ? -g[alpha] : g[alpha]);
    }
    return std::ldexp(total.value(), -static_cast<int>(model.n_detectors));
}

std::vector<double> char_sum_all_probs(
    const DetectorErrorModel &model, const std::vector<double> &theta) {
    std::vector<double> g = character_table(model, theta);
    size_t m = model.n_detectors;
    // In-place fast Walsh-Hadamard transform.
    for (size_t bit = 0; bit < m; bit++) {
        size_t h = size_t{1} << bit;
        for (size_t base = 0; base < g.size(); base += 2 * h) {
            for (size_t k = base; k < base + h; k++) {
                double a = g[k];
                double b = g[k + h];
                g[k] = a + b;
                g[k + h] = a - b;
            }
        }
    }
    double scale = std::ldexp(1.0, -static_cast<int>(m));
    for (double &x : g) {
        x *= scale;
    }
    return g;
}

double brute_partition(const DualSpinGraph &graph, FixLogical fix) {
    size_t v = graph.n_vertices();
    if (v > 20) {
        throw std::invalid_argument("brute_partition requires V <= 20, got " + std::to_string(v));
    }
    if (fix != FixLogical::kFree &&
        (graph.logical_spin == kNoSpin || graph.auxiliary_spin == kNoSpin)) {
        throw std::invalid_argument("graph has no logical/auxiliary spin pair to pin");
    }
    double acc = kNegInf;
    for (uint64_t config = 0; config < (uint64_t{1} << v); config++) {
        if (fix != FixLogical::kFree) {
            bool same = ((config >> graph.logical_spin) & 1) == ((config >> graph.auxiliary_spin) & 1);
            if (same != (fix == FixLogical::kPlus)) {
                continue;
            }
        }
        double h = 0.0;
        for (const auto &edge : graph.edges) {
            double su = ((config >> edge.u) & 1) ? -1.0 : 1.0;
            double sv = ((config >> edge.v) & 1) ? -1.0 : 1.0;
            h += edge.coupling * su * sv;
        }
        acc = log_add(acc, h);
    }
    return acc;
}

BruteDecodeResult brute_ml_decode(
    const DetectorErrorModel &model, const std::vector<double> &theta, const BitVec &syndrome) {
    check_counts(model, syndrome);
    size_t n = model.n_mechanisms();
    if (n > 24) {
        throw std::invalid_argument("brute_ml_decode requires n <= 24");
    }
    if (model.n_detectors > 64) {
        throw std::invalid_argument("brute_ml_decode requires m <= 64");
    }
    uint64_t target = syndrome_key(syndrome);
    CompensatedSum coset[2];
    for (uint32_t config = 0; config < (uint32_t{1} << n); config++) {
        bool logical = false;
        if (config_signature(model, config, &logical) == target) {
            coset[logical ? 1 : 0].add(config_probability(theta, config, n));
        }
    }
    BruteDecodeResult res;
    res.p0 = coset[0].value();
    res.p1 = coset[1].value();
    res.prediction = res.p1 > res.p0 ? 1 : 0;
    return res;
}

std::vector<double> fd_grad(
    const std::function<double(std::span<const double>)> &f, std::vector<double> theta, double h) {
    std::vector<double> grad(theta.size());
    for (size_t i = 0; i < theta.size(); i++) {
        double t = theta[i];
        double lo = t - h;
        double hi = t + h;
        if (lo <= 0.0 || hi >= 1.0) {
            // Step by h in logit space instead; log-scale objectives stay
            // well conditioned there.
            double phi = std::log(t / (1.0 - t));
            lo = 1.0 / (1.0 + std::exp(-(phi - h)));
            hi = 1.0 / (1.0 + std::exp(-(phi + h)));
        }
        theta[i] = hi;
        double f_hi = f(theta);
        theta[i] = lo;
        double f_lo = f(theta);
        theta[i] = t;
        if (!std::isfinite(f_hi) || !std::isfinite(f_lo)) {
            throw std::runtime_error("fd_grad: non-finite function value");
        }
        grad[i] = (f_hi - f_lo) / (hi - lo);
    }
    return grad;
}

}  // namespace oracle
}  // namespace demfit
