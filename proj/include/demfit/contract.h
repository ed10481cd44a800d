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

#ifndef DEMFIT_CONTRACT_H
#define DEMFIT_CONTRACT_H

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "demfit/tn.h"

namespace demfit {

// Binary contraction plan. Nodes 0..n_leaves-1 are the network's nodes in
// order; internal nodes follow. An index is summed at the unique lowest
// tree node whose subtree covers all of its holders; the shot batch axis is
// never summed.
struct ContractionTree {
    struct Node {
        int32_t left = -1;
        int32_t right = -1;
    };
    size_t n_leaves = 0;
    std::vector<Node> nodes;  // size 2*n_leaves-1; leaves first
    uint32_t root = 0;

    std::string to_json(uint64_t network_hash) const;
    static ContractionTree from_json(const std::string &text, uint64_t *network_hash_out = nullptr);
    // Internal nodes in children-before-parent order.
    std::vector<uint32_t> topo_order() const;
    void check_shape() const;  // throws on malformed trees
};

struct CostWeights {
    double w_mem = 1.0;
    double w_acc = 0.2;
    // Trees whose largest intermediate exceeds this many elements get
    // infinite loss.
    double mem_cap_elems = static_cast<double>(uint64_t{1} << 30);
};

struct CostReport {
    double total_flops = 0.0;
    double max_tensor_elems = 0.0;
    double total_access_bytes = 0.0;
    double loss = 0.0;
};

// Symbolic cost of executing `tree` on `network` with a given shot batch
// size. No tensor data is touched.
CostReport estimate_cost(
    const TensorNetwork &network,
    const ContractionTree &tree,
    size_t batch_size = 1,
    const CostWeights &weights = {});

struct SaConfig {
    uint64_t seed = 0;
    int proposals_per_temp = 10000;
    double decay = 0.96;
    double t_floor = 1e-3;
    double t0 = 0.0;             // 0 = calibrate so initial acceptance ~ accept_target
    double accept_target = 0.8;
    int chains = 1;              // independent restarts, best tree wins
    size_t batch_size = 1;       // batch size used for costing
    CostWeights weights;
    double time_budget_seconds = 0.0;  // 0 = no budget
};

// Greedy seed tree (repeatedly contract the pair with the smallest result)
// refined by simulated annealing over subtree rotations and leaf swaps.
// Deterministic given cfg.seed; always returns the best tree seen.
ContractionTree optimize_path(const TensorNetwork &network, const SaConfig &cfg = {});

struct ContractOutput {
    std::vector<double> log_abs;  // per shot; -inf when the value is exactly 0
    std::vector<int8_t> sign;     // per shot in {-1, 0, +1}
};

class ContractionEngine;

// Executes the tree bottom-up with per-shot max-abs rescaling; the output
// already includes the network's global log scale. Keep the engine around
// to run backward() afterwards.
class Contractor {
  public:
    Contractor(
        const TensorNetwork &network,
        const ContractionTree &tree,
        size_t checkpoint_elems = size_t{1} << 24);
    ~Contractor();

    ContractOutput forward(const std::vector<double> &theta, const BoundSyndromes &bound);

    // d(sum_s weights[s] * log|value_s|)/d theta, reusing cached forward
    // intermediates (large ones are recomputed per the checkpoint policy).
    std::vector<double> backward(const std::vector<double> &upstream_weights);

    uint64_t flops_executed() const;

  private:
    std::unique_ptr<ContractionEngine> engine_;
};

}  // namespace demfit

#endif
