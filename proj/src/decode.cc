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

#include "demfit/decode.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "demfit/logspace.h"
#include "demfit/rng.h"
#include "demfit/planar.h"
#include "demfit/tn.h"

namespace demfit {

namespace {

// Distinct syndromes with back-pointers, so each unique syndrome is decoded
// once regardless of how often it occurs in the batch.
struct Dedup {
    std::vector<BitVec> unique;
    std::vector<uint32_t> of_shot;
};

Dedup dedup_shots(const ShotBatch &batch) {
    Dedup out;
    out.of_shot.resize(batch.n_shots);
    std::unordered_map<BitVec, uint32_t, BitVecHash> seen;
    for (size_t s = 0; s < batch.n_shots; s++) {
        BitVec row = batch.row(s);
        auto [it, inserted] = seen.emplace(std::move(row), static_cast<uint32_t>(out.unique.size()));
        if (inserted) {
            out.unique.push_back(it->first);
        }
        out.of_shot[s] = it->second;
    }
    return out;
}

DecodeResult scatter(const Dedup &dedup, const std::vector<double> &odds_unique, size_t ties) {
    DecodeResult res;
    res.ties = ties;
    res.predicted = BitVec(dedup.of_shot.size());
    res.log_odds.resize(dedup.of_shot.size());
    for (size_t s = 0; s < dedup.of_shot.size(); s++) {
        double odds = odds_unique[dedup.of_shot[s]];
        res.log_odds[s] = odds;
        res.predicted.set(s, odds < 0.0);
    }
    return res;
}

// Probability that an odd number of the detector-free logical mechanisms
// fire: q = (1 - prod(1-2 theta)) / 2.
double detached_flip_probability(const DetectorErrorModel &model, const std::vector<double> &theta) {
    double prod = 1.0;
    bool any = false;
    for (size_t i = 0; i < model.n_mechanisms(); i++) {
        if (model.mechanisms[i].detectors.empty() && model.mechanisms[i].flips_logical) {
            prod *= 1.0 - 2.0 * theta[i];
            any = true;
        }
    }
    return any ? 0.5 * (1.0 - prod) : 0.0;
}

// Mixes independent flip noise q into the coset pair:
//   p0' = p0 (1-q) + p1 q,  p1' = p1 (1-q) + p0 q  (in log space).
void mix_detached(double q, double *log_p0, double *log_p1) {
    if (q <= 0.0) {
        return;
    }
    double lq = std::log(q);
    double l1q = std::log1p(-q);
    double a = log_add(*log_p0 + l1q, *log_p1 + lq);
    double b = log_add(*log_p1 + l1q, *log_p0 + lq);
    *log_p0 = a;
    *log_p1 = b;
}

}  // namespace

DecodeResult decode_planar(
    const DetectorErrorModel &model, const std::vector<double> &theta, const ShotBatch &batch,
    int threads) {
    if (batch.n_detectors != model.n_detectors) {
        throw std::invalid_argument("shot batch width does not match model");
    }
    PlanarSolver solver(model);
    Dedup dedup = dedup_shots(batch);
    double q_free = detached_flip_probability(model, theta);

    std::vector<double> odds(dedup.unique.size());
    std::atomic<size_t> ties{0};
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        while (true) {
            size_t u = next.fetch_add(1);
            if (u >= dedup.unique.size()) {
                return;
            }
            auto coset = solver.coset_log_z(theta, dedup.unique[u]);
            // Z(+) belongs to the reference pure error's logical class.
            double log_p0 = coset.ref_logical ? coset.log_z_minus : coset.log_z_plus;
            double log_p1 = coset.ref_logical ? coset.log_z_plus : coset.log_z_minus;
            mix_detached(q_free, &log_p0, &log_p1);
            double lo = log_p0 - log_p1;
            if (log_p0 == log_p1) {
                lo = 0.0;  // covers -inf/-inf and exact ties
                ties.fetch_add(1);
            }
            odds[u] = lo;
        }
    };
    int n_threads = std::max(1, threads);
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; t++) {
            pool.emplace_back(worker);
        }
        for (auto &th : pool) {
            th.join();
        }
    }
    return scatter(dedup, odds, ties.load());
}

DecodeResult decode_tn(
    const DetectorErrorModel &model, const std::vector<double> &theta, const ShotBatch &batch,
    const SaConfig &sa, size_t checkpoint_elems) {
    if (batch.n_detectors != model.n_detectors) {
        throw std::invalid_argument("shot batch width does not match model");
    }
    bool any_logical = false;
    for (const auto &mech : model.mechanisms) {
        any_logical |= mech.flips_logical;
    }
    Dedup dedup = dedup_shots(batch);
    std::vector<double> odds(dedup.unique.size());
    size_t ties = 0;

    if (!any_logical) {
        // Degenerate decoding: the observable never flips.
        std::fill(odds.begin(), odds.end(), std::numeric_limits<double>::infinity());
        return scatter(dedup, odds, 0);
    }

    // The two networks share their structure, so one contraction tree
    // serves both the likelihood and the decoder contraction.
    auto lik_net = build_likelihood_network(model, theta);
    auto dec_net = build_decoder_network(model, theta);
    SaConfig lik_sa = sa;
    lik_sa.seed = derive_seed(sa.seed, 0x11f3);
    auto tree = optimize_path(lik_net, lik_sa);
    Contractor lik(lik_net, tree, checkpoint_elems);
    Contractor dec(dec_net, tree, checkpoint_elems);
    auto lik_out = lik.forward(theta, bind_syndromes(lik_net, dedup.unique));
    auto dec_out = dec.forward(theta, bind_syndromes(dec_net, dedup.unique));

    for (size_t u = 0; u < dedup.unique.size(); u++) {
        double lp = lik_out.log_abs[u];
        double la = dec_out.log_abs[u];
        int sa_sign = dec_out.sign[u];
        if (lik_out.sign[u] == 0) {
            // p(s) = 0: unreachable syndrome; report a tie.
            odds[u] = 0.0;
            ties++;
            continue;
        }
        // p0 = (p + A)/2, p1 = (p - A)/2 computed in log space via
        // x = A/p in [-1, 1].
        double x = sa_sign == 0 ? 0.0 : sa_sign * std::exp(std::min(0.0, la - lp));
        if (la >= lp) {
            x = static_cast<double>(sa_sign);
        }
        if (x >= 1.0) {
            odds[u] = std::numeric_limits<double>::infinity();
        } else if (x <= -1.0) {
            odds[u] = -std::numeric_limits<double>::infinity();
        } else {
            odds[u] = std::log1p(x) - std::log1p(-x);
        }
        if (sa_sign == 0) {
            ties++;
        }
    }
    return scatter(dedup, odds, ties);
}

std::string LerReport::to_json() const {
    std::ostringstream out;
    out.precision(12);
    out << "{\"shots\":" << shots << ",\"failures\":" << failures << ",\"ler\":" << ler
        << ",\"wilson95\":[" << wilson_low << "," << wilson_high << "]";
    if (per_round) {
        out << ",\"per_round\":" << *per_round;
    }
    out << ",\"ties\":" << ties << ",\"warnings\":[";
    for (size_t w = 0; w < warnings.size(); w++) {
        out << (w ? "," : "") << "\"" << warnings[w] << "\"";
    }
    out << "]}";
    return out.str();
}

LerReport evaluate_ler(
    const DetectorErrorModel &model,
    const std::vector<double> &theta,
    const ShotBatch &batch,
    Backend decoder,
    const SaConfig &sa,
    int threads) {
    if (!batch.logical_flips) {
        throw std::invalid_argument("logical error rate needs labeled shots");
    }
    DecodeResult decoded = decoder == Backend::kPlanar ? decode_planar(model, theta, batch, threads)
                                                       : decode_tn(model, theta, batch, sa);
    LerReport report;
    report.shots = batch.n_shots;
    report.ties = decoded.ties;
    for (size_t s = 0; s < batch.n_shots; s++) {
        report.failures += decoded.predicted.get(s) != batch.logical_flips->get(s);
    }
    double n = static_cast<double>(report.shots);
    double p_hat = static_cast<double>(report.failures) / n;
    report.ler = p_hat;
    constexpr double z = 1.959963984540054;  // 95% normal quantile
    double z2 = z * z;
    double denom = 1.0 + z2 / n;
    double center = (p_hat + z2 / (2 * n)) / denom;
    double half = z * std::sqrt(p_hat * (1 - p_hat) / n + z2 / (4 * n * n)) / denom;
    report.wilson_low = std::max(0.0, center - half);
    report.wilson_high = std::min(1.0, center + half);

    auto it = model.metadata.find("r");
    if (it == model.metadata.end()) {
        report.warnings.push_back("model metadata has no round count; per-round rate omitted");
    } else {
        double rounds = std::stod(it->second);
        if (rounds >= 1) {
            double base = std::max(0.0, 1.0 - 2.0 * p_hat);
            report.per_round = 0.5 * (1.0 - std::pow(base, 1.0 / rounds));
        }
    }
    return report;
}

}  // namespace demfit
