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

#ifndef DEMFIT_TN_H
#define DEMFIT_TN_H

#include <cstdint>
#include <string>
#include <vector>

#include "demfit/dem.h"

namespace demfit {

// Node kinds of the factored likelihood network. The XOR constraint of each
// detector is decomposed into a shared binary index alpha_j conjugated by
// 2x2 Hadamard matrices, so the network only ever holds probability
// vectors, Hadamard matrices, and per-shot sign vectors.
enum class TnNodeKind : uint8_t {
    kProbVector,  // (1-theta_i, theta_i) on index e_i; decoder networks flip
                  // the second entry's sign for logical mechanisms
    kHadamard,    // [[1,1],[1,-1]] on (alpha_j, e_i)
    kSignVector,  // (1, (-1)^{s_j}) on alpha_j; the only shot-dependent node
};

struct TnNode {
    TnNodeKind kind;
    // Global index ids; all dimensions are 2. ProbVector: {e_i}. Hadamard:
    // {alpha_j, e_i}. SignVector: {alpha_j}.
    std::vector<uint32_t> indices;
    uint32_t mechanism = UINT32_MAX;  // for kProbVector / kHadamard
    uint32_t detector = UINT32_MAX;   // for kHadamard / kSignVector
    bool negate_fired = false;        // decoder sign flip on this ProbVector
    // Spacetime locality hint, (round, space...) from the detector
    // coordinates when the model has them. Path search seeds its sweep
    // order from these; they carry no semantics.
    std::vector<double> locality;
};

// Hyper-index tensor network evaluating p_theta(s) (likelihood networks) or
// p(s,l=0) - p(s,l=1) (decoder networks) when contracted with bound
// syndromes and multiplied by exp(global_log_scale).
struct TensorNetwork {
    size_t n_indices = 0;  // all dimension 2
    std::vector<TnNode> nodes;
    double global_log_scale = 0.0;
    size_t n_mechanisms = 0;
    size_t n_detectors = 0;
    bool decoder = false;

    // Holder node ids per index, in node order.
    std::vector<std::vector<uint32_t>> index_holders() const;
    // Stable structural hash (ignores probabilities; contraction trees only
    // depend on the structure).
    uint64_t structure_hash() const;
    // Debug/pathfind dump: nodes, indices, dims as a JSON document.
    std::string to_json() const;
};

// Per-shot sign assignments for the network's SignVector nodes.
struct BoundSyndromes {
    size_t n_shots = 0;
    // signs[k][shot] = true when detector of SignVector k fired. Order
    // matches the network's SignVector nodes.
    std::vector<BitVec> fired;
};

// Likelihood network: contraction with bound signs gives
//   p(s) = 2^-m sum_alpha (-1)^{alpha.s} prod_i [(1-th_i) + th_i(-1)^{sum_{j in del_i} alpha_j}].
// Sign vectors are left symbolic until bind_syndromes.
TensorNetwork build_likelihood_network(const DetectorErrorModel &model, const std::vector<double> &theta);

// Decoder network: same structure with (1-th, -th) on logical mechanisms;
// contraction gives exactly p(s, l=0) - p(s, l=1).
TensorNetwork build_decoder_network(const DetectorErrorModel &model, const std::vector<double> &theta);

// Binds a batch of syndromes to the network's sign vectors. The batch axis
// is shared and never summed.
BoundSyndromes bind_syndromes(const TensorNetwork &network, const ShotBatch &batch);
BoundSyndromes bind_syndromes(const TensorNetwork &network, const std::vector<BitVec> &syndromes);

}  // namespace demfit

#endif
