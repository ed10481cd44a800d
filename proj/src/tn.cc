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

#include "demfit/tn.h"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace demfit {

namespace {

TensorNetwork build_network(
    const DetectorErrorModel &model, const std::vector<double> &theta, bool decoder) {
    if (theta.size() != model.n_mechanisms()) {
        throw std::invalid_argument("prior vector length does not match mechanism count");
    }
    TensorNetwork net;
    net.n_mechanisms = model.n_mechanisms();
    net.n_detectors = model.n_detectors;
    net.decoder = decoder;
    // Index ids: e_i = i, alpha_j = n + j.
    net.n_indices = model.n_mechanisms() + model.n_detectors;
    auto alpha = [&](uint32_t j) {
        return static_cast<uint32_t>(model.n_mechanisms() + j);
    };

    // Locality hints: detector coordinates reordered round-first.
    auto locality_of_detector = [&](uint32_t j) {
        std::vector<double> key;
        if (j < model.detector_coords.size() && !model.detector_coords[j].empty()) {
            const auto &c = model.detector_coords[j];
            key.push_back(c.back());
            for (size_t q = 0; q + 1 < c.size(); q++) {
                key.push_back(c[c.size() - 2 - q]);
            }
        }
        return key;
    };
    auto locality_of_mechanism = [&](const ErrorMechanism &mech) {
        std::vector<double> key;
        size_t used = 0;
        for (uint32_t j : mech.detectors) {
            auto dk = locality_of_detector(j);
            if (dk.empty()) {
                continue;
            }
            if (key.size() < dk.size()) {
                key.resize(dk.size(), 0.0);
            }
            for (size_t q = 0; q < dk.size(); q++) {
                key[q] += dk[q];
            }
            used++;
        }
        if (used > 0) {
            for (double &v : key) {
                v /= static_cast<double>(used);
            }
        }
        return key;
    };

    if (decoder) {
        bool any_logical = false;
        for (const auto &mech : model.mechanisms) {
            any_logical |= mech.flips_logical;
        }
        if (!any_logical) {
            throw std::runtime_error(
                "model has no mechanism acting on the logical observable; decoding is degenerate");
        }
    }

    for (uint32_t i = 0; i < model.n_mechanisms(); i++) {
        const auto &mech = model.mechanisms[i];
        TnNode prob;
        prob.kind = TnNodeKind::kProbVector;
        prob.indices = {i};
        prob.mechanism = i;
        prob.negate_fired = decoder && mech.flips_logical;
        prob.locality = locality_of_mechanism(mech);
        net.nodes.push_back(std::move(prob));
        for (uint32_t j : mech.detectors) {
            TnNode had;
            had.kind = TnNodeKind::kHadamard;
            had.indices = {alpha(j), i};
            had.mechanism = i;
            had.detector = j;
            had.locality = locality_of_detector(j);
            net.nodes.push_back(std::move(had));
        }
    }
    for (uint32_t j = 0; j < model.n_detectors; j++) {
        TnNode sign;
        sign.kind = TnNodeKind::kSignVector;
        sign.indices = {alpha(j)};
        sign.detector = j;
        sign.locality = locality_of_detector(j);
        net.nodes.push_back(std::move(sign));
    }
    // All 2^-m normalization lives here, never in tensor values.
    net.global_log_scale = -static_cast<double>(model.n_detectors) * std::log(2.0);
    (void)theta;  // values are materialized at contraction time
    return net;
}

}  // namespace

std::vector<std::vector<uint32_t>> TensorNetwork::index_holders() const {
    std::vector<std::vector<uint32_t>> holders(n_indices);
    for (uint32_t k = 0; k < nodes.size(); k++) {
        for (uint32_t idx : nodes[k].indices) {
            holders[idx].push_back(k);
        }
    }
    return holders;
}

uint64_t TensorNetwork::structure_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](uint64_t x) {
        h ^= x + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        h *= 0x100000001b3ULL;
    };
    mix(n_indices);
    // The decoder flag only changes tensor values, never the structure, so
    // likelihood and decoder networks share trees.
    for (const auto &node : nodes) {
        mix(static_cast<uint64_t>(node.kind));
        for (uint32_t idx : node.indices) {
            mix(idx);
        }
    }
    return h;
}

std::string TensorNetwork::to_json() const {
    std::ostringstream out;
    out << "{\"n_indices\":" << n_indices << ",\"decoder\":" << (decoder ? "true" : "false")
        << ",\"global_log_scale\":" << global_log_scale << ",\"nodes\":[";
    for (size_t k = 0; k < nodes.size(); k++) {
        const auto &node = nodes[k];
        const char *kind = node.kind == TnNodeKind::kProbVector  ? "prob"
                           : node.kind == TnNodeKind::kHadamard ? "hadamard"
                                                                : "sign";
        out << (k ? "," : "") << "{\"kind\":\"" << kind << "\",\"indices\":[";
        for (size_t q = 0; q < node.indices.size(); q++) {
            out << (q ? "," : "") << node.indices[q];
        }
        out << "],\"dims\":[";
        for (size_t q = 0; q < node.indices.size(); q++) {
            out << (q ? "," : "") << 2;
        }
        out << "]";
        if (node.mechanism != UINT32_MAX) {
            out << ",\"mechanism\":" << node.mechanism;
        }
        if (node.detector != UINT32_MAX) {
            out << ",\"detector\":" << node.detector;
        }
        out << "}";
    }
    out << "]}";
    return out.str();
}

TensorNetwork build_likelihood_network(
    const DetectorErrorModel &model, const std::vector<double> &theta) {
    return build_network(model, theta, false);
}

TensorNetwork build_decoder_network(
    const DetectorErrorModel &model, const std::vector<double> &theta) {
    return build_network(model, theta, true);
}

BoundSyndromes bind_syndromes(const TensorNetwork &network, const std::vector<BitVec> &syndromes) {
    BoundSyndromes bound;
    bound.n_shots = syndromes.size();
    size_t n_sign = 0;
    for (const auto &node : network.nodes) {
        n_sign += node.kind == TnNodeKind::kSignVector;
    }
    bound.fired.reserve(n_sign);
    for (const auto &node : network.nodes) {
        if (node.kind != TnNodeKind::kSignVector) {
            continue;
        }
        BitVec column(syndromes.size());
        for (size_t s = 0; s < syndromes.size(); s++) {
            if (syndromes[s].n != network.n_detectors) {
                throw std::invalid_argument("syndrome width does not match network");
            }
            column.set(s, syndromes[s].get(node.detector));
        }
        bound.fired.push_back(std::move(column));
    }
    return bound;
}

BoundSyndromes bind_syndromes(const TensorNetwork &network, const ShotBatch &batch) {
    if (batch.n_detectors != network.n_detectors) {
        throw std::invalid_argument("shot batch width does not match network");
    }
    BoundSyndromes bound;
    bound.n_shots = batch.n_shots;
    for (const auto &node : network.nodes) {
        if (node.kind != TnNodeKind::kSignVector) {
            continue;
        }
        BitVec column(batch.n_shots);
        for (size_t s = 0; s < batch.n_shots; s++) {
            column.set(s, batch.get(s, node.detector));
        }
        bound.fired.push_back(std::move(column));
    }
    return bound;
}

}  // namespace demfit
