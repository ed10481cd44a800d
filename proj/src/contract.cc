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

#include "demfit/contract.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>
#include <unordered_map>

#include "demfit/logspace.h"
#include "demfit/rng.h"

namespace demfit {

namespace {

using IndexCount = std::pair<uint32_t, uint32_t>;  // (index id, holders inside subtree)

struct NodeInfo {
    std::vector<IndexCount> retained;
    bool batched = false;
    bool has_prob = false;
    // Cost terms at the configured batch size; zero for leaves except elems.
    double flops = 0.0;
    double out_elems = 0.0;
    double access = 0.0;
};

double pow2d(size_t bits) {
    return std::ldexp(1.0, static_cast<int>(bits));
}

// Merge two children's retained lists; indices whose holder count reaches
// deg are summed at this node and dropped from the result.
void merge_retained(
    const std::vector<IndexCount> &a,
    const std::vector<IndexCount> &b,
    const std::vector<uint32_t> &deg,
    std::vector<IndexCount> *out,
    size_t *union_size) {
    out->clear();
    size_t i = 0, j = 0, uni = 0;
    while (i < a.size() || j < b.size()) {
        uni++;
        if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) {
            out->push_back(a[i]);
            i++;
        } else if (i == a.size() || b[j].first < a[i].first) {
            out->push_back(b[j]);
            j++;
        } else {
            uint32_t count = a[i].second + b[j].second;
            if (count < deg[a[i].first]) {
                out->push_back({a[i].first, count});
            }
            i++;
            j++;
        }
    }
    *union_size = uni;
}

struct TreeContext {
    const TensorNetwork *net;
    std::vector<uint32_t> deg;
    size_t batch_size = 1;

    explicit TreeContext(const TensorNetwork &network, size_t batch) : net(&network), batch_size(batch) {
        deg.assign(network.n_indices, 0);
        for (const auto &node : network.nodes) {
            for (uint32_t idx : node.indices) {
                deg[idx]++;
            }
        }
    }

    NodeInfo leaf_info(uint32_t leaf) const {
        NodeInfo info;
        const auto &node = net->nodes[leaf];
        std::vector<uint32_t> sorted_idx = node.indices;
        std::sort(sorted_idx.begin(), sorted_idx.end());
        for (uint32_t idx : sorted_idx) {
            if (deg[idx] > 1) {
                info.retained.push_back({idx, 1});
            }
        }
        info.batched = node.kind == TnNodeKind::kSignVector;
        info.has_prob = node.kind == TnNodeKind::kProbVector;
        info.out_elems = pow2d(info.retained.size()) * (info.batched ? static_cast<double>(batch_size) : 1.0);
        return info;
    }

    // Cost of contracting children `a` and `b` into `out` (retained already
    // merged into out->retained).
    void fill_internal_cost(const NodeInfo &a, const NodeInfo &b, size_t union_size, NodeInfo *out) const {
        out->batched = a.batched || b.batched;
        out->has_prob = a.has_prob || b.has_prob;
        double batch = out->batched ? static_cast<double>(batch_size) : 1.0;
        out->flops = pow2d(union_size) * batch;
        out->out_elems = pow2d(out->retained.size()) * batch;
        double a_elems = a.out_elems;
        double b_elems = b.out_elems;
        out->access = (a_elems + b_elems + out->out_elems) * 8.0;
    }

    NodeInfo merge(const NodeInfo &a, const NodeInfo &b) const {
        NodeInfo out;
        size_t union_size = 0;
        merge_retained(a.retained, b.retained, deg, &out.retained, &union_size);
        fill_internal_cost(a, b, union_size, &out);
        return out;
    }
};

std::vector<NodeInfo> compute_infos(
    const TensorNetwork &net, const ContractionTree &tree, size_t batch_size) {
    TreeContext ctx(net, batch_size);
    std::vector<NodeInfo> infos(tree.nodes.size());
    for (uint32_t k = 0; k < tree.n_leaves; k++) {
        infos[k] = ctx.leaf_info(k);
    }
    for (uint32_t k : tree.topo_order()) {
        const auto &node = tree.nodes[k];
        infos[k] = ctx.merge(infos[node.left], infos[node.right]);
    }
    return infos;
}

}  // namespace

// ---- ContractionTree --------------------------------------------------------

void ContractionTree::check_shape() const {
    if (n_leaves == 0 || nodes.size() != 2 * n_leaves - 1 || root >= nodes.size()) {
        throw std::invalid_argument("malformed contraction tree");
    }
    std::vector<int> child_count(nodes.size(), 0);
    for (size_t k = 0; k < nodes.size(); k++) {
        const auto &node = nodes[k];
        bool leaf = k < n_leaves;
        if (leaf != (node.left < 0)) {
            throw std::invalid_argument("contraction tree leaf/internal mismatch");
        }
        if (!leaf) {
            if (node.left < 0 || node.right < 0 || node.left >= static_cast<int32_t>(nodes.size()) ||
                node.right >= static_cast<int32_t>(nodes.size()) || node.left == node.right) {
                throw std::invalid_argument("contraction tree has invalid children");
            }
            child_count[node.left]++;
            child_count[node.right]++;
        }
    }
    for (size_t k = 0; k < nodes.size(); k++) {
        int expect = k == root ? 0 : 1;
        if (child_count[k] != expect) {
            throw std::invalid_argument("contraction tree is not a tree over all leaves");
        }
    }
}

std::vector<uint32_t> ContractionTree::topo_order() const {
    // Iterative postorder from the root; internal nodes only.
    std::vector<uint32_t> order;
    order.reserve(nodes.size() - n_leaves);
    std::vector<std::pair<uint32_t, bool>> stack = {{root, false}};
    while (!stack.empty()) {
        auto [k, expanded] = stack.back();
        stack.pop_back();
        if (k < n_leaves) {
            continue;
        }
        if (expanded) {
            order.push_back(k);
            continue;
        }
        stack.push_back({k, true});
        stack.push_back({static_cast<uint32_t>(nodes[k].left), false});
        stack.push_back({static_cast<uint32_t>(nodes[k].right), false});
    }
    return order;
}

std::string ContractionTree::to_json(uint64_t network_hash) const {
    std::ostringstream out;
    out << "{\"network_hash\":\"" << std::hex << network_hash << std::dec << "\",\"n_leaves\":" << n_leaves
        << ",\"root\":" << root << ",\"children\":[";
    for (size_t k = n_leaves; k < nodes.size(); k++) {
        out << (k > n_leaves ? "," : "") << "[" << nodes[k].left << "," << nodes[k].right << "]";
    }
    out << "]}";
    return out.str();
}

ContractionTree ContractionTree::from_json(const std::string &text, uint64_t *network_hash_out) {
    // Minimal parser for the exact format emitted by to_json.
    auto find_num = [&](const char *key) -> long long {
        size_t pos = text.find(key);
        if (pos == std::string::npos) {
            throw std::runtime_error("contraction tree JSON missing field: " + std::string(key));
        }
        pos += std::strlen(key);
        return std::strtoll(text.c_str() + pos, nullptr, 10);
    };
    ContractionTree tree;
    tree.n_leaves = static_cast<size_t>(find_num("\"n_leaves\":"));
    tree.root = static_cast<uint32_t>(find_num("\"root\":"));
    if (network_hash_out) {
        size_t pos = text.find("\"network_hash\":\"");
        if (pos != std::string::npos) {
            *network_hash_out = std::strtoull(text.c_str() + pos + 16, nullptr, 16);
        } else {
            *network_hash_out = 0;
        }
    }
    tree.nodes.resize(tree.n_leaves);
    size_t pos = text.find("\"children\":[");
    if (pos == std::string::npos) {
        throw std::runtime_error("contraction tree JSON missing children");
    }
    const char *p = text.c_str() + pos + 12;
    while (*p && *p != ']') {
        if (*p == '[') {
            char *end = nullptr;
            long long l = std::strtoll(p + 1, &end, 10);
            long long r = std::strtoll(end + 1, &end, 10);
            Node node;
            node.left = static_cast<int32_t>(l);
            node.right = static_cast<int32_t>(r);
            tree.nodes.push_back(node);
            p = end + 1;
        } else {
            p++;
        }
    }
    tree.check_shape();
    return tree;
}

// ---- Cost estimation ---------------------------------------------------------

namespace {

// Cost aggregates; max_tensor_elems counts intermediates (internal nodes),
// not the network's input tensors.
CostReport report_from_infos(
    const std::vector<NodeInfo> &infos, size_t n_leaves, const CostWeights &weights) {
    CostReport report;
    for (size_t k = 0; k < infos.size(); k++) {
        const auto &info = infos[k];
        report.total_flops += info.flops;
        report.total_access_bytes += info.access;
        if (k >= n_leaves) {
            report.max_tensor_elems = std::max(report.max_tensor_elems, info.out_elems);
        }
    }
    if (infos.size() == n_leaves) {
        for (const auto &info : infos) {
            report.max_tensor_elems = std::max(report.max_tensor_elems, info.out_elems);
        }
    }
    if (report.max_tensor_elems > weights.mem_cap_elems) {
        report.loss = std::numeric_limits<double>::infinity();
    } else {
        report.loss = std::log2(std::max(1.0, report.total_flops)) +
                      weights.w_mem * std::log2(std::max(1.0, report.max_tensor_elems)) +
                      weights.w_acc * std::log2(std::max(1.0, report.total_access_bytes));
    }
    return report;
}

}  // namespace

CostReport estimate_cost(
    const TensorNetwork &network,
    const ContractionTree &tree,
    size_t batch_size,
    const CostWeights &weights) {
    tree.check_shape();
    if (tree.n_leaves != network.nodes.size()) {
        throw std::invalid_argument("tree leaf count does not match network");
    }
    auto infos = compute_infos(network, tree, batch_size);
    return report_from_infos(infos, tree.n_leaves, weights);
}

// ---- Greedy seed tree ---------------------------------------------------------

namespace {

// Left-deep chain over a bandwidth-minimizing node order. For the
// quasi-local networks built from memory experiments, the running frontier
// then stays near the physical cut width, which makes this a feasible
// (often strong) starting tree for annealing.
ContractionTree chain_tree(const TensorNetwork &net, const TreeContext &ctx) {
    size_t n_leaves = net.nodes.size();
    ContractionTree tree;
    tree.n_leaves = n_leaves;
    tree.nodes.resize(n_leaves);
    if (n_leaves == 1) {
        tree.root = 0;
        return tree;
    }
    // Locality hints, when the builder provided them, define the sweep
    // order directly.
    size_t with_hint = 0;
    for (const auto &node : net.nodes) {
        with_hint += !node.locality.empty();
    }
    if (with_hint * 10 >= n_leaves * 9) {
        std::vector<uint32_t> order(n_leaves);
        for (uint32_t v = 0; v < n_leaves; v++) {
            order[v] = v;
        }
        std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
            return std::make_pair(std::cref(net.nodes[a].locality), a) <
                   std::make_pair(std::cref(net.nodes[b].locality), b);
        });
        uint32_t acc = order[0];
        for (size_t q = 1; q < order.size(); q++) {
            ContractionTree::Node node;
            node.left = static_cast<int32_t>(acc);
            node.right = static_cast<int32_t>(order[q]);
            acc = static_cast<uint32_t>(tree.nodes.size());
            tree.nodes.push_back(node);
        }
        tree.root = acc;
        tree.check_shape();
        (void)ctx;
        return tree;
    }
    // Node adjacency via shared indices.
    std::vector<std::vector<uint32_t>> holders(net.n_indices);
    for (uint32_t k = 0; k < n_leaves; k++) {
        for (uint32_t idx : net.nodes[k].indices) {
            holders[idx].push_back(k);
        }
    }
    std::vector<std::vector<uint32_t>> adj(n_leaves);
    for (const auto &hs : holders) {
        for (size_t a = 0; a < hs.size(); a++) {
            for (size_t b = a + 1; b < hs.size(); b++) {
                adj[hs[a]].push_back(hs[b]);
                adj[hs[b]].push_back(hs[a]);
            }
        }
    }
    for (auto &list : adj) {
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
    }
    // Cuthill-McKee from a pseudo-peripheral vertex.
    auto bfs_far = [&](uint32_t start) {
        std::vector<int> dist(n_leaves, -1);
        std::vector<uint32_t> queue = {start};
        dist[start] = 0;
        uint32_t last = start;
        for (size_t q = 0; q < queue.size(); q++) {
            uint32_t v = queue[q];
            last = v;
            for (uint32_t w : adj[v]) {
                if (dist[w] < 0) {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        return last;
    };
    uint32_t start = bfs_far(bfs_far(0));
    std::vector<uint32_t> order;
    std::vector<bool> seen(n_leaves, false);
    std::vector<uint32_t> queue = {start};
    seen[start] = true;
    for (size_t q = 0; q < queue.size(); q++) {
        uint32_t v = queue[q];
        order.push_back(v);
        std::vector<uint32_t> next;
        for (uint32_t w : adj[v]) {
            if (!seen[w]) {
                seen[w] = true;
                next.push_back(w);
            }
        }
        std::sort(next.begin(), next.end(), [&](uint32_t a, uint32_t b) {
            return std::make_pair(adj[a].size(), a) < std::make_pair(adj[b].size(), b);
        });
        queue.insert(queue.end(), next.begin(), next.end());
    }
    for (uint32_t v = 0; v < n_leaves; v++) {
        if (!seen[v]) {
            order.push_back(v);  // disconnected pieces at the end
        }
    }
    uint32_t acc = order[0];
    for (size_t q = 1; q < order.size(); q++) {
        ContractionTree::Node node;
        node.left = static_cast<int32_t>(acc);
        node.right = static_cast<int32_t>(order[q]);
        acc = static_cast<uint32_t>(tree.nodes.size());
        tree.nodes.push_back(node);
    }
    tree.root = acc;
    tree.check_shape();
    (void)ctx;
    return tree;
}

ContractionTree greedy_tree(const TensorNetwork &net, const TreeContext &ctx, uint64_t seed) {
    size_t n_leaves = net.nodes.size();
    ContractionTree tree;
    tree.n_leaves = n_leaves;
    tree.nodes.resize(n_leaves);
    if (n_leaves == 1) {
        tree.root = 0;
        return tree;
    }
    auto rng = make_rng(seed);

    std::vector<NodeInfo> infos(n_leaves);
    std::vector<uint32_t> version(n_leaves, 0);
    std::vector<bool> alive(n_leaves, true);
    // Per index: alive tree nodes currently retaining it.
    std::vector<std::set<uint32_t>> holders(net.n_indices);
    for (uint32_t k = 0; k < n_leaves; k++) {
        infos[k] = ctx.leaf_info(k);
        for (const auto &[idx, cnt] : infos[k].retained) {
            holders[idx].insert(k);
        }
    }

    struct Cand {
        double reduction;  // result size minus operand sizes: smaller is better
        double size;
        uint64_t tie;
        uint32_t a, b;
        uint32_t va, vb;
        bool operator>(const Cand &other) const {
            return std::tie(reduction, size, tie) > std::tie(other.reduction, other.size, other.tie);
        }
    };
    std::priority_queue<Cand, std::vector<Cand>, std::greater<Cand>> heap;
    auto push_pair = [&](uint32_t a, uint32_t b) {
        if (a == b) {
            return;
        }
        if (a > b) {
            std::swap(a, b);
        }
        NodeInfo merged = ctx.merge(infos[a], infos[b]);
        // Randomized tie-breaking keeps chains diverse but deterministic.
        Cand cand{merged.out_elems - infos[a].out_elems - infos[b].out_elems,
                  merged.out_elems, rng(), a, b, version[a], version[b]};
        heap.push(cand);
    };
    std::set<std::pair<uint32_t, uint32_t>> seeded;
    for (uint32_t idx = 0; idx < net.n_indices; idx++) {
        for (auto it = holders[idx].begin(); it != holders[idx].end(); ++it) {
            auto jt = it;
            for (++jt; jt != holders[idx].end(); ++jt) {
                if (seeded.insert({*it, *jt}).second) {
                    push_pair(*it, *jt);
                }
            }
        }
    }

    auto contract_nodes = [&](uint32_t a, uint32_t b) -> uint32_t {
        uint32_t merged_id = static_cast<uint32_t>(tree.nodes.size());
        ContractionTree::Node node;
        node.left = static_cast<int32_t>(a);
        node.right = static_cast<int32_t>(b);
        tree.nodes.push_back(node);
        infos.push_back(ctx.merge(infos[a], infos[b]));
        version.push_back(0);
        alive.push_back(true);
        alive[a] = alive[b] = false;
        for (const auto &[idx, cnt] : infos[a].retained) {
            holders[idx].erase(a);
        }
        for (const auto &[idx, cnt] : infos[b].retained) {
            holders[idx].erase(b);
        }
        for (const auto &[idx, cnt] : infos[merged_id].retained) {
            holders[idx].insert(merged_id);
        }
        return merged_id;
    };

    size_t remaining = n_leaves;
    while (remaining > 1) {
        Cand best;
        bool found = false;
        while (!heap.empty()) {
            best = heap.top();
            heap.pop();
            if (alive[best.a] && alive[best.b] && version[best.a] == best.va &&
                version[best.b] == best.vb) {
                found = true;
                break;
            }
        }
        if (!found) {
            break;  // remaining pieces share no indices
        }
        uint32_t merged_id = contract_nodes(best.a, best.b);
        remaining--;
        std::set<uint32_t> partners;
        for (const auto &[idx, cnt] : infos[merged_id].retained) {
            for (uint32_t other : holders[idx]) {
                if (other != merged_id) {
                    partners.insert(other);
                }
            }
        }
        for (uint32_t other : partners) {
            push_pair(merged_id, other);
        }
    }

    if (remaining > 1) {
        // Disconnected components: fold them together smallest-first.
        std::vector<uint32_t> rest;
        for (uint32_t k = 0; k < tree.nodes.size(); k++) {
            if (alive[k]) {
                rest.push_back(k);
            }
        }
        std::sort(rest.begin(), rest.end(), [&](uint32_t a, uint32_t b) {
            return std::make_pair(infos[a].out_elems, a) < std::make_pair(infos[b].out_elems, b);
        });
        uint32_t acc = rest[0];
        for (size_t q = 1; q < rest.size(); q++) {
            acc = contract_nodes(acc, rest[q]);
        }
    }
    tree.root = static_cast<uint32_t>(tree.nodes.size() - 1);
    tree.check_shape();
    return tree;
}

// ---- Simulated annealing -------------------------------------------------------

struct SaState {
    const TreeContext *ctx;
    ContractionTree tree;
    std::vector<NodeInfo> infos;
    std::vector<int32_t> parent;
    double total_flops = 0.0;
    double total_access = 0.0;
    std::multiset<double> elems;
    const CostWeights *weights;

    void rebuild_aggregates() {
        total_flops = 0.0;
        total_access = 0.0;
        elems.clear();
        for (size_t k = 0; k < infos.size(); k++) {
            total_flops += infos[k].flops;
            total_access += infos[k].access;
            if (k >= tree.n_leaves) {
                elems.insert(infos[k].out_elems);
            }
        }
    }

    void rebuild_parents() {
        parent.assign(tree.nodes.size(), -1);
        for (size_t k = tree.n_leaves; k < tree.nodes.size(); k++) {
            parent[tree.nodes[k].left] = static_cast<int32_t>(k);
            parent[tree.nodes[k].right] = static_cast<int32_t>(k);
        }
    }

    double loss() const {
        double max_elems = elems.empty() ? 1.0 : *elems.rbegin();
        double penalty = 0.0;
        if (max_elems > weights->mem_cap_elems) {
            // Steep but finite so annealing can walk back into the feasible
            // region; estimate_cost reports infinity for such trees.
            penalty = 64.0 * (std::log2(max_elems) - std::log2(weights->mem_cap_elems));
        }
        return std::log2(std::max(1.0, total_flops)) +
               weights->w_mem * std::log2(std::max(1.0, max_elems)) +
               weights->w_acc * std::log2(std::max(1.0, total_access)) + penalty;
    }

    void replace_info(uint32_t node, NodeInfo &&next) {
        NodeInfo &cur = infos[node];
        total_flops += next.flops - cur.flops;
        total_access += next.access - cur.access;
        auto it = elems.find(cur.out_elems);
        elems.erase(it);
        elems.insert(next.out_elems);
        cur = std::move(next);
    }

    // Recompute infos for `node` (children must be current).
    NodeInfo recompute(uint32_t node) const {
        const auto &n = tree.nodes[node];
        return ctx->merge(infos[n.left], infos[n.right]);
    }
};

struct Snapshot {
    std::vector<std::pair<uint32_t, NodeInfo>> infos;
    std::vector<std::tuple<uint32_t, int32_t, int32_t>> links;  // node, left, right
    std::vector<std::pair<uint32_t, int32_t>> parents;
    double total_flops;
    double total_access;
};

class Annealer {
  public:
    Annealer(const TensorNetwork &net, const SaConfig &cfg, uint64_t chain_seed)
        : ctx_(net, cfg.batch_size), ctx_net_(&net), cfg_(cfg), rng_(make_rng(chain_seed)) {
        state_.ctx = &ctx_;
        state_.weights = &cfg_.weights;
        state_.tree = greedy_tree(net, ctx_, derive_seed(chain_seed, 0xa11ce));
        state_.infos = compute_infos(net, state_.tree, cfg.batch_size);
        state_.rebuild_parents();
        state_.rebuild_aggregates();
        double greedy_loss = state_.loss();
        ContractionTree chain = chain_tree(net, ctx_);
        auto chain_infos = compute_infos(net, chain, cfg.batch_size);
        {
            SaState probe;
            probe.ctx = &ctx_;
            probe.weights = &cfg_.weights;
            probe.tree = chain;
            probe.infos = chain_infos;
            probe.rebuild_aggregates();
            if (probe.loss() < greedy_loss) {
                state_.tree = std::move(probe.tree);
                state_.infos = std::move(probe.infos);
                state_.rebuild_parents();
                state_.rebuild_aggregates();
            }
        }
        best_tree_ = state_.tree;
        best_loss_ = state_.loss();
    }

    void run() {
        if (state_.tree.n_leaves < 3) {
            return;
        }
        bool debug = std::getenv("DEMFIT_SA_DEBUG") != nullptr;
        double t_top = cfg_.t0 > 0 ? cfg_.t0 : calibrate_t0();
        auto deadline_start = std::chrono::steady_clock::now();
        auto out_of_time = [&]() {
            return cfg_.time_budget_seconds > 0 &&
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - deadline_start)
                           .count() > cfg_.time_budget_seconds;
        };
        // With a time budget, cooler re-annealing cycles follow the first
        // schedule until the budget runs out.
        for (int cycle = 0; cycle == 0 || cfg_.time_budget_seconds > 0; cycle++) {
            double t = t_top;
            while (t > cfg_.t_floor) {
                refresh_hot_nodes();
                int accepted = 0;
                for (int p = 0; p < cfg_.proposals_per_temp; p++) {
                    accepted += propose(t);
                    if ((p & 255) == 0 && out_of_time()) {
                        return;
                    }
                }
                // Exact refresh guards against float drift in the running sums.
                state_.rebuild_aggregates();
                // Restart from the best tree when the walk has wandered far
                // uphill; keeps the search anchored near the feasible region.
                if (state_.loss() > best_loss_ + 50.0) {
                    reset_to_best();
                }
                if (debug) {
                    std::fprintf(
                        stderr, "sa: cycle=%d T=%.4g accept=%.2f loss=%.2f best=%.2f flops=%.3g max=2^%.1f\n",
                        cycle, t,
                        static_cast<double>(accepted) / std::max(1, cfg_.proposals_per_temp),
                        state_.loss(), best_loss_, state_.total_flops,
                        std::log2(std::max(1.0, state_.elems.empty() ? 1.0 : *state_.elems.rbegin())));
                }
                t *= cfg_.decay;
            }
            if (out_of_time()) {
                return;
            }
            reset_to_best();
            t_top = std::max(0.05, t_top * 0.5);
        }
    }

    void reset_to_best() {
        state_.tree = best_tree_;
        state_.infos = compute_infos(*ctx_net_, state_.tree, cfg_.batch_size);
        state_.rebuild_parents();
        state_.rebuild_aggregates();
        refresh_hot_nodes();
    }

    // Internal nodes within a factor 2^8 of the most expensive contraction;
    // proposals favor these, since moves elsewhere rarely change the loss.
    void refresh_hot_nodes() {
        hot_nodes_.clear();
        double max_flops = 0.0;
        for (size_t k = state_.tree.n_leaves; k < state_.infos.size(); k++) {
            max_flops = std::max(max_flops, state_.infos[k].flops);
        }
        double cut = max_flops / 256.0;
        for (size_t k = state_.tree.n_leaves; k < state_.infos.size(); k++) {
            if (state_.infos[k].flops >= cut) {
                hot_nodes_.push_back(static_cast<uint32_t>(k));
            }
        }
    }

    ContractionTree best_tree() const {
        return best_tree_;
    }
    double best_loss() const {
        return best_loss_;
    }

  private:
    double calibrate_t0() {
        // Sample uphill move magnitudes and aim for the configured initial
        // acceptance. The median keeps rare memory-cap penalty jumps from
        // melting the schedule.
        std::vector<double> uphill;
        double before = state_.loss();
        for (int trial = 0; trial < 400; trial++) {
            Snapshot snap;
            if (!apply_random_move(&snap)) {
                continue;
            }
            double after = state_.loss();
            rollback(snap);
            if (after > before) {
                uphill.push_back(after - before);
            }
        }
        if (uphill.empty()) {
            return 1.0;
        }
        std::nth_element(uphill.begin(), uphill.begin() + uphill.size() / 2, uphill.end());
        double median = uphill[uphill.size() / 2];
        double denom = -std::log(std::min(0.999, cfg_.accept_target));
        return std::clamp(median / denom, 0.05, 8.0);
    }

    bool propose(double t) {
        double before = state_.loss();
        Snapshot snap;
        if (!apply_random_move(&snap)) {
            return false;
        }
        double after = state_.loss();
        bool accept = after <= before;
        if (!accept) {
            double u = uniform_double(rng_);
            accept = u < std::exp((before - after) / t);
        }
        if (!accept) {
            rollback(snap);
            return false;
        }
        if (after < best_loss_) {
            best_loss_ = after;
            best_tree_ = state_.tree;
        }
        return true;
    }

    bool apply_random_move(Snapshot *snap) {
        snap->infos.clear();
        snap->links.clear();
        snap->parents.clear();
        snap->total_flops = state_.total_flops;
        snap->total_access = state_.total_access;
        if (uniform_double(rng_) < 0.8) {
            return rotate_move(snap);
        }
        return swap_move(snap);
    }

    void save_info(Snapshot *snap, uint32_t node) {
        snap->infos.emplace_back(node, state_.infos[node]);
    }
    void save_links(Snapshot *snap, uint32_t node) {
        snap->links.emplace_back(node, state_.tree.nodes[node].left, state_.tree.nodes[node].right);
    }
    void save_parent(Snapshot *snap, uint32_t node) {
        snap->parents.emplace_back(node, state_.parent[node]);
    }

    void rollback(const Snapshot &snap) {
        for (auto it = snap.infos.rbegin(); it != snap.infos.rend(); ++it) {
            state_.replace_info(it->first, NodeInfo(it->second));
        }
        for (const auto &[node, left, right] : snap.links) {
            state_.tree.nodes[node].left = left;
            state_.tree.nodes[node].right = right;
        }
        for (const auto &[node, par] : snap.parents) {
            state_.parent[node] = par;
        }
        state_.total_flops = snap.total_flops;
        state_.total_access = snap.total_access;
    }

    // ((A,B),C) -> ((A,C),B) or ((B,C),A), picking a random internal node X
    // and a random internal child.
    bool rotate_move(Snapshot *snap) {
        size_t n = state_.tree.nodes.size();
        uint32_t x;
        if (!hot_nodes_.empty() && uniform_double(rng_) < 0.75) {
            x = hot_nodes_[uniform_index(rng_, hot_nodes_.size())];
        } else {
            x = static_cast<uint32_t>(
                state_.tree.n_leaves + uniform_index(rng_, n - state_.tree.n_leaves));
        }
        auto &xn = state_.tree.nodes[x];
        bool left_internal = static_cast<size_t>(xn.left) >= state_.tree.n_leaves;
        bool right_internal = static_cast<size_t>(xn.right) >= state_.tree.n_leaves;
        if (!left_internal && !right_internal) {
            return false;
        }
        bool use_left = left_internal && (!right_internal || bernoulli(rng_, 0.5));
        uint32_t inner = static_cast<uint32_t>(use_left ? xn.left : xn.right);
        uint32_t other = static_cast<uint32_t>(use_left ? xn.right : xn.left);
        auto &in_node = state_.tree.nodes[inner];
        bool move_left_out = bernoulli(rng_, 0.5);
        uint32_t moved = static_cast<uint32_t>(move_left_out ? in_node.left : in_node.right);
        uint32_t kept = static_cast<uint32_t>(move_left_out ? in_node.right : in_node.left);

        save_links(snap, x);
        save_links(snap, inner);
        save_info(snap, inner);
        save_info(snap, x);
        save_parent(snap, moved);
        save_parent(snap, other);

        // inner becomes (kept, other); x becomes (inner, moved).
        in_node.left = static_cast<int32_t>(kept);
        in_node.right = static_cast<int32_t>(other);
        xn.left = static_cast<int32_t>(inner);
        xn.right = static_cast<int32_t>(moved);
        state_.parent[other] = static_cast<int32_t>(inner);
        state_.parent[moved] = static_cast<int32_t>(x);

        state_.replace_info(inner, state_.recompute(inner));
        state_.replace_info(x, state_.recompute(x));
        return true;
    }

    // Swap two random leaves and refresh the paths up to their LCA.
    bool swap_move(Snapshot *snap) {
        uint32_t u = static_cast<uint32_t>(uniform_index(rng_, state_.tree.n_leaves));
        uint32_t v = static_cast<uint32_t>(uniform_index(rng_, state_.tree.n_leaves));
        if (u == v || state_.parent[u] == state_.parent[v]) {
            return false;
        }
        int32_t pu = state_.parent[u];
        int32_t pv = state_.parent[v];

        // Mark u's ancestors.
        thread_local std::vector<uint32_t> marks;
        thread_local std::vector<uint32_t> mark_stamp;
        thread_local uint32_t stamp = 0;
        if (mark_stamp.size() < state_.tree.nodes.size()) {
            mark_stamp.assign(state_.tree.nodes.size(), 0);
        }
        stamp++;
        int path_len = 0;
        for (int32_t a = pu; a >= 0; a = state_.parent[a]) {
            mark_stamp[a] = stamp;
            path_len++;
        }
        int32_t lca = pv;
        int v_len = 0;
        while (lca >= 0 && mark_stamp[lca] != stamp) {
            lca = state_.parent[lca];
            v_len++;
        }
        if (lca < 0 || path_len + v_len > 96) {
            return false;
        }
        if (static_cast<uint32_t>(lca) == u || static_cast<uint32_t>(lca) == v) {
            return false;
        }

        save_parent(snap, u);
        save_parent(snap, v);
        save_links(snap, pu);
        save_links(snap, pv);
        auto swap_child = [&](int32_t par, uint32_t from, uint32_t to) {
            auto &node = state_.tree.nodes[par];
            if (node.left == static_cast<int32_t>(from)) {
                node.left = static_cast<int32_t>(to);
            } else {
                node.right = static_cast<int32_t>(to);
            }
        };
        swap_child(pu, u, v);
        swap_child(pv, v, u);
        state_.parent[u] = pv;
        state_.parent[v] = pu;

        // Refresh infos from both parents up to (and including) the LCA.
        for (int32_t a = pu; a >= 0; a = state_.parent[a]) {
            save_info(snap, a);
            state_.replace_info(a, state_.recompute(a));
            if (a == lca) {
                break;
            }
        }
        for (int32_t a = pv; a >= 0; a = state_.parent[a]) {
            if (a == lca) {
                break;
            }
            save_info(snap, a);
            state_.replace_info(a, state_.recompute(a));
        }
        // The LCA's inputs changed again after the second path refresh.
        save_info(snap, lca);
        state_.replace_info(lca, state_.recompute(lca));
        return true;
    }

    TreeContext ctx_;
    const TensorNetwork *ctx_net_;
    SaConfig cfg_;
    std::mt19937_64 rng_;
    SaState state_;
    std::vector<uint32_t> hot_nodes_;
    ContractionTree best_tree_;
    double best_loss_ = 0.0;
};

}  // namespace

ContractionTree optimize_path(const TensorNetwork &network, const SaConfig &cfg) {
    if (network.nodes.empty()) {
        throw std::invalid_argument("cannot optimize an empty network");
    }
    ContractionTree best;
    double best_loss = std::numeric_limits<double>::infinity();
    int chains = std::max(1, cfg.chains);
    for (int chain = 0; chain < chains; chain++) {
        Annealer annealer(network, cfg, derive_seed(cfg.seed, static_cast<uint64_t>(chain)));
        annealer.run();
        if (annealer.best_loss() < best_loss) {
            best_loss = annealer.best_loss();
            best = annealer.best_tree();
        }
    }
    return best;
}

// ---- Execution ----------------------------------------------------------------

namespace {

struct Tensor {
    std::vector<uint32_t> idx;  // sorted ascending; idx[0] is the slowest axis
    bool batched = false;
    size_t shots = 1;
    std::vector<double> data;
    std::vector<double> scale;  // per shot when batched, else one entry

    size_t block() const {
        return size_t{1} << idx.size();
    }
    double scale_at(size_t s) const {
        return batched ? scale[s] : scale[0];
    }
};

// Rearranges bits: out tensor's axes are in[perm[0]], in[perm[1]], ...
void permute_block(
    const double *in, double *out, const std::vector<uint32_t> &perm) {
    size_t r = perm.size();
    if (r == 0) {
        out[0] = in[0];
        return;
    }
    // Precompute the input stride contributed by each output axis.
    std::vector<size_t> stride(r);
    for (size_t p = 0; p < r; p++) {
        stride[p] = size_t{1} << (r - 1 - perm[p]);
    }
    size_t total = size_t{1} << r;
    // Gray-code walk: flip one output axis at a time.
    size_t src = 0;
    size_t prev_gray = 0;
    out[0] = in[0];
    for (size_t j = 1; j < total; j++) {
        size_t gray = j ^ (j >> 1);
        size_t diff = gray ^ prev_gray;
        int bit = __builtin_ctzll(diff);
        // Output axis index for this bit (bit 0 is the fastest = axis r-1).
        size_t axis = r - 1 - static_cast<size_t>(bit);
        src ^= stride[axis];
        out[gray] = in[src];
        prev_gray = gray;
    }
}

bool is_identity_perm(const std::vector<uint32_t> &perm) {
    for (size_t p = 0; p < perm.size(); p++) {
        if (perm[p] != p) {
            return false;
        }
    }
    return true;
}

// Generalized pairwise contraction: multiply over shared indices, sum the
// shared indices absent from out_idx, broadcast-keep the rest. The batch
// axis rides along unsummed.
Tensor contract_pair(
    const Tensor &a, const Tensor &b, const std::vector<uint32_t> &out_idx, uint64_t *flops) {
    // Categorize indices.
    std::vector<uint32_t> g, k, m, n;
    {
        size_t i = 0, j = 0;
        while (i < a.idx.size() || j < b.idx.size()) {
            if (j == b.idx.size() || (i < a.idx.size() && a.idx[i] < b.idx[j])) {
                m.push_back(a.idx[i]);
                i++;
            } else if (i == a.idx.size() || b.idx[j] < a.idx[i]) {
                n.push_back(b.idx[j]);
                j++;
            } else {
                uint32_t idx = a.idx[i];
                if (std::binary_search(out_idx.begin(), out_idx.end(), idx)) {
                    g.push_back(idx);
                } else {
                    k.push_back(idx);
                }
                i++;
                j++;
            }
        }
    }
    for (uint32_t idx : m) {
        if (!std::binary_search(out_idx.begin(), out_idx.end(), idx)) {
            throw std::logic_error("contract_pair: single-side index must be retained");
        }
    }
    for (uint32_t idx : n) {
        if (!std::binary_search(out_idx.begin(), out_idx.end(), idx)) {
            throw std::logic_error("contract_pair: single-side index must be retained");
        }
    }
    if (out_idx.size() != g.size() + m.size() + n.size()) {
        throw std::logic_error("contract_pair: output indices do not match operands");
    }

    size_t gs = size_t{1} << g.size();
    size_t ms = size_t{1} << m.size();
    size_t ns = size_t{1} << n.size();
    size_t ks = size_t{1} << k.size();

    // Permutations into [g, m, k] and [g, k, n].
    auto perm_for = [](const std::vector<uint32_t> &have, std::initializer_list<const std::vector<uint32_t> *> groups) {
        std::vector<uint32_t> perm;
        for (const auto *grp : groups) {
            for (uint32_t idx : *grp) {
                auto it = std::lower_bound(have.begin(), have.end(), idx);
                perm.push_back(static_cast<uint32_t>(it - have.begin()));
            }
        }
        return perm;
    };
    std::vector<uint32_t> a_perm = perm_for(a.idx, {&g, &m, &k});
    std::vector<uint32_t> b_perm = perm_for(b.idx, {&g, &k, &n});
    // Raw output layout [g, m, n] -> sorted out_idx.
    std::vector<uint32_t> raw_out;
    raw_out.insert(raw_out.end(), g.begin(), g.end());
    raw_out.insert(raw_out.end(), m.begin(), m.end());
    raw_out.insert(raw_out.end(), n.begin(), n.end());
    std::vector<uint32_t> out_perm(out_idx.size());
    for (size_t p = 0; p < out_idx.size(); p++) {
        auto it = std::find(raw_out.begin(), raw_out.end(), out_idx[p]);
        out_perm[p] = static_cast<uint32_t>(it - raw_out.begin());
    }

    Tensor out;
    out.idx = out_idx;
    out.batched = a.batched || b.batched;
    out.shots = out.batched ? std::max(a.batched ? a.shots : 0, b.batched ? b.shots : 0) : 1;
    size_t out_block = out.block();
    out.data.assign((out.batched ? out.shots : 1) * out_block, 0.0);
    out.scale.assign(out.batched ? out.shots : 1, 0.0);

    size_t a_block = a.block();
    size_t b_block = b.block();
    bool a_identity = is_identity_perm(a_perm);
    bool b_identity = is_identity_perm(b_perm);
    bool out_identity = is_identity_perm(out_perm);
    std::vector<double> a_scratch(a_identity ? 0 : a_block);
    std::vector<double> b_scratch(b_identity ? 0 : b_block);
    std::vector<double> c_scratch(out_identity ? 0 : out_block);

    size_t loop_shots = out.batched ? out.shots : 1;
    if (flops) {
        *flops += loop_shots * gs * ms * ns * ks;
    }
    for (size_t s = 0; s < loop_shots; s++) {
        const double *a_src = a.data.data() + (a.batched ? s * a_block : 0);
        const double *b_src = b.data.data() + (b.batched ? s * b_block : 0);
        const double *a_use = a_src;
        const double *b_use = b_src;
        if (!a_identity) {
            permute_block(a_src, a_scratch.data(), a_perm);
            a_use = a_scratch.data();
        }
        if (!b_identity) {
            permute_block(b_src, b_scratch.data(), b_perm);
            b_use = b_scratch.data();
        }
        double *c_dst = out.data.data() + s * out_block;
        double *c_use = out_identity ? c_dst : c_scratch.data();
        // c[g, m, n] = sum_k a[g, m, k] * b[g, k, n]
        for (size_t gi = 0; gi < gs; gi++) {
            const double *ab = a_use + gi * ms * ks;
            const double *bb = b_use + gi * ks * ns;
            double *cb = c_use + gi * ms * ns;
            for (size_t mi = 0; mi < ms; mi++) {
                for (size_t ni = 0; ni < ns; ni++) {
                    double acc = 0.0;
                    for (size_t ki = 0; ki < ks; ki++) {
                        acc += ab[mi * ks + ki] * bb[ki * ns + ni];
                    }
                    cb[mi * ns + ni] = acc;
                }
            }
        }
        if (!out_identity) {
            permute_block(c_use, c_dst, out_perm);
        }
        out.scale[out.batched ? s : 0] = a.scale_at(a.batched ? s : 0) + b.scale_at(b.batched ? s : 0);
    }
    if (!out.batched) {
        out.scale[0] = a.scale[0] + b.scale[0];
    }
    return out;
}

// Divides each shot block by its max-abs entry and accumulates the log into
// the tensor's running scale. All-zero blocks are left zeroed.
void rescale(Tensor *t) {
    size_t block = t->block();
    size_t loop = t->batched ? t->shots : 1;
    for (size_t s = 0; s < loop; s++) {
        double *d = t->data.data() + s * block;
        double mx = 0.0;
        for (size_t q = 0; q < block; q++) {
            mx = std::max(mx, std::abs(d[q]));
        }
        if (mx > 0.0) {
            double inv = 1.0 / mx;
            for (size_t q = 0; q < block; q++) {
                d[q] *= inv;
            }
            t->scale[s] += std::log(mx);
        }
    }
}

}  // namespace

class ContractionEngine {
  public:
    ContractionEngine(const TensorNetwork &net, const ContractionTree &tree, size_t checkpoint_elems)
        : net_(net), tree_(tree), checkpoint_elems_(checkpoint_elems) {
        tree_.check_shape();
        if (tree_.n_leaves != net_.nodes.size()) {
            throw std::invalid_argument("tree does not match network");
        }
        deg_.assign(net_.n_indices, 0);
        for (const auto &node : net_.nodes) {
            for (uint32_t idx : node.indices) {
                deg_[idx]++;
            }
        }
        // Retained index list per tree node.
        retained_.resize(tree_.nodes.size());
        batched_.assign(tree_.nodes.size(), false);
        has_prob_.assign(tree_.nodes.size(), false);
        for (uint32_t k = 0; k < tree_.n_leaves; k++) {
            const auto &node = net_.nodes[k];
            std::vector<uint32_t> sorted_idx = node.indices;
            std::sort(sorted_idx.begin(), sorted_idx.end());
            for (uint32_t idx : sorted_idx) {
                if (deg_[idx] > 1) {
                    retained_[k].push_back(idx);
                }
            }
            batched_[k] = node.kind == TnNodeKind::kSignVector;
            has_prob_[k] = node.kind == TnNodeKind::kProbVector;
        }
        topo_ = tree_.topo_order();
        std::vector<std::map<uint32_t, uint32_t>> counts(tree_.nodes.size());
        for (uint32_t k = 0; k < tree_.n_leaves; k++) {
            for (uint32_t idx : retained_[k]) {
                counts[k][idx] = 1;
            }
        }
        for (uint32_t k : topo_) {
            const auto &node = tree_.nodes[k];
            auto &mine = counts[k];
            mine = counts[node.left];
            for (const auto &[idx, c] : counts[node.right]) {
                mine[idx] += c;
            }
            for (const auto &[idx, c] : mine) {
                if (c < deg_[idx]) {
                    retained_[k].push_back(idx);
                }
            }
            batched_[k] = batched_[node.left] || batched_[node.right];
            has_prob_[k] = has_prob_[node.left] || has_prob_[node.right];
            counts[node.left].clear();
            counts[node.right].clear();
        }
        if (!retained_[tree_.root].empty()) {
            throw std::logic_error("contraction tree root retains indices");
        }
        // Column of each SignVector node in BoundSyndromes order.
        uint32_t col = 0;
        sign_column_.assign(net_.nodes.size(), UINT32_MAX);
        for (uint32_t k = 0; k < net_.nodes.size(); k++) {
            if (net_.nodes[k].kind == TnNodeKind::kSignVector) {
                sign_column_[k] = col++;
            }
        }
    }

    ContractOutput forward(const std::vector<double> &theta, const BoundSyndromes &bound) {
        if (theta.size() != net_.n_mechanisms) {
            throw std::invalid_argument("prior vector length does not match network");
        }
        theta_ = theta;
        bound_ = bound;
        have_bound_ = true;
        cache_.clear();
        flops_ = 0;

        Tensor root = compute(tree_.root, true);
        ContractOutput out;
        size_t shots = bound.n_shots;
        out.log_abs.assign(shots, 0.0);
        out.sign.assign(shots, 0);
        for (size_t s = 0; s < shots; s++) {
            double v = root.batched ? root.data[s] : root.data[0];
            double sc = root.scale_at(root.batched ? s : 0);
            if (v == 0.0) {
                out.log_abs[s] = kNegInf;
                out.sign[s] = 0;
            } else {
                out.log_abs[s] = std::log(std::abs(v)) + sc + net_.global_log_scale;
                out.sign[s] = v > 0 ? 1 : -1;
            }
        }
        return out;
    }

    std::vector<double> backward(const std::vector<double> &weights) {
        if (!have_bound_) {
            throw std::runtime_error("backward called before forward");
        }
        if (weights.size() != bound_.n_shots) {
            throw std::invalid_argument("upstream weight count does not match shots");
        }
        std::vector<double> grad(net_.n_mechanisms, 0.0);

        // Root adjoint: d(sum w log|v|)/dv = w / v (scaled bookkeeping).
        const Tensor root = compute(tree_.root, true);
        std::unordered_map<uint32_t, Tensor> adj;
        Tensor root_adj;
        root_adj.idx = {};
        root_adj.batched = true;
        root_adj.shots = bound_.n_shots;
        root_adj.data.resize(bound_.n_shots);
        root_adj.scale.resize(bound_.n_shots);
        for (size_t s = 0; s < bound_.n_shots; s++) {
            double v = root.batched ? root.data[s] : root.data[0];
            if (v == 0.0 && weights[s] != 0.0) {
                throw std::runtime_error(
                    "backward through an exactly-zero probability (shot " + std::to_string(s) + ")");
            }
            root_adj.data[s] = v == 0.0 ? 0.0 : weights[s] / v;
            // adj_true = adj_hat * exp(-tau) with tau_root = sigma_root.
            root_adj.scale[s] = root.scale_at(root.batched ? s : 0);
        }
        adj.emplace(tree_.root, std::move(root_adj));

        // Reverse topological sweep.
        for (auto it = topo_.rbegin(); it != topo_.rend(); ++it) {
            uint32_t c = *it;
            auto found = adj.find(c);
            if (found == adj.end()) {
                continue;
            }
            Tensor c_adj = std::move(found->second);
            adj.erase(found);
            uint32_t left = static_cast<uint32_t>(tree_.nodes[c].left);
            uint32_t right = static_cast<uint32_t>(tree_.nodes[c].right);
            for (int side = 0; side < 2; side++) {
                uint32_t target = side == 0 ? left : right;
                uint32_t other = side == 0 ? right : left;
                if (!has_prob_[target]) {
                    continue;
                }
                Tensor other_t = compute(other, false);
                Tensor raw = contract_pair(c_adj, other_t, retained_[target], &flops_);
                // adj_true(target) = raw * exp(sigma_other - tau_c); fold the
                // per-shot exponents into the adjoint's scale.
                size_t loop = raw.batched ? raw.shots : 1;
                for (size_t s = 0; s < loop; s++) {
                    double sigma_other = other_t.scale_at(other_t.batched ? s : 0);
                    double tau_c = c_adj.scale_at(c_adj.batched ? s : 0);
                    // raw.scale currently holds tau_c + sigma_other from
                    // contract_pair's scale addition; reset to the adjoint
                    // meaning.
                    raw.scale[s] = tau_c - sigma_other;
                }
                rescale(&raw);
                // rescale adds log(max) to scale; adjoint scale runs with
                // the opposite sign, so flip its contribution.
                for (size_t s = 0; s < loop; s++) {
                    double tau_c = c_adj.scale_at(c_adj.batched ? s : 0);
                    double sigma_other = other_t.scale_at(other_t.batched ? s : 0);
                    double added = raw.scale[s] - (tau_c - sigma_other);
                    raw.scale[s] = (tau_c - sigma_other) - added;
                }
                if (target < tree_.n_leaves) {
                    accumulate_leaf_grad(target, raw, &grad);
                } else {
                    adj.emplace(target, std::move(raw));
                }
            }
        }
        return grad;
    }

    uint64_t flops() const {
        return flops_;
    }

  private:
    Tensor materialize_leaf(uint32_t k) const {
        const auto &node = net_.nodes[k];
        Tensor t;
        if (node.kind == TnNodeKind::kProbVector) {
            double th = theta_[node.mechanism];
            double hi = node.negate_fired ? -th : th;
            if (deg_[node.indices[0]] == 1) {
                t.idx = {};
                t.data = {1.0 - th + hi};
            } else {
                t.idx = {node.indices[0]};
                t.data = {1.0 - th, hi};
            }
            t.scale = {0.0};
        } else if (node.kind == TnNodeKind::kHadamard) {
            t.idx = node.indices;
            std::sort(t.idx.begin(), t.idx.end());
            t.data = {1.0, 1.0, 1.0, -1.0};
            t.scale = {0.0};
        } else {
            const BitVec &fired = bound_.fired[sign_column_[k]];
            size_t shots = bound_.n_shots;
            t.batched = true;
            t.shots = shots;
            if (deg_[node.indices[0]] == 1) {
                t.idx = {};
                t.data.resize(shots);
                for (size_t s = 0; s < shots; s++) {
                    t.data[s] = fired.get(s) ? 0.0 : 2.0;
                }
            } else {
                t.idx = {node.indices[0]};
                t.data.resize(2 * shots);
                for (size_t s = 0; s < shots; s++) {
                    t.data[2 * s] = 1.0;
                    t.data[2 * s + 1] = fired.get(s) ? -1.0 : 1.0;
                }
            }
            t.scale.assign(shots, 0.0);
        }
        return t;
    }

    // Computes (and caches small) tensors for a tree node.
    Tensor compute(uint32_t k, bool force_cache) {
        auto it = cache_.find(k);
        if (it != cache_.end()) {
            return it->second;
        }
        Tensor result;
        if (k < tree_.n_leaves) {
            result = materialize_leaf(k);
        } else {
            Tensor a = compute(static_cast<uint32_t>(tree_.nodes[k].left), false);
            Tensor b = compute(static_cast<uint32_t>(tree_.nodes[k].right), false);
            result = contract_pair(a, b, retained_[k], &flops_);
            rescale(&result);
        }
        size_t elems = (result.batched ? result.shots : 1) * result.block();
        if (force_cache || elems <= checkpoint_elems_) {
            cache_[k] = result;
        }
        return result;
    }

    void accumulate_leaf_grad(uint32_t leaf, const Tensor &leaf_adj, std::vector<double> *grad) const {
        const auto &node = net_.nodes[leaf];
        if (node.kind != TnNodeKind::kProbVector) {
            return;
        }
        double d0, d1;
        bool scalar = deg_[node.indices[0]] == 1;
        if (scalar) {
            // d/dtheta of (1-th)+(+-th): 0 for likelihood, -2 for decoder.
            d0 = node.negate_fired ? -2.0 : 0.0;
            d1 = 0.0;
        } else {
            d0 = -1.0;
            d1 = node.negate_fired ? -1.0 : 1.0;
        }
        size_t loop = leaf_adj.batched ? leaf_adj.shots : 1;
        double acc = 0.0;
        for (size_t s = 0; s < loop; s++) {
            double unscale = std::exp(-leaf_adj.scale_at(leaf_adj.batched ? s : 0));
            if (scalar) {
                acc += leaf_adj.data[s] * unscale * d0;
            } else {
                acc += (leaf_adj.data[2 * s] * d0 + leaf_adj.data[2 * s + 1] * d1) * unscale;
            }
        }
        (*grad)[node.mechanism] += acc;
    }

    TensorNetwork net_;
    ContractionTree tree_;
    size_t checkpoint_elems_;
    std::vector<uint32_t> deg_;
    std::vector<std::vector<uint32_t>> retained_;
    std::vector<bool> batched_;
    std::vector<bool> has_prob_;
    std::vector<uint32_t> topo_;
    std::vector<uint32_t> sign_column_;
    std::vector<double> theta_;
    BoundSyndromes bound_;
    bool have_bound_ = false;
    std::unordered_map<uint32_t, Tensor> cache_;
    uint64_t flops_ = 0;
};

Contractor::Contractor(const TensorNetwork &network, const ContractionTree &tree, size_t checkpoint_elems)
    : engine_(new ContractionEngine(network, tree, checkpoint_elems)) {
}
Contractor::~Contractor() = default;

ContractOutput Contractor::forward(const std::vector<double> &theta, const BoundSyndromes &bound) {
    return engine_->forward(theta, bound);
}

std::vector<double> Contractor::backward(const std::vector<double> &upstream_weights) {
    return engine_->backward(upstream_weights);
}

uint64_t Contractor::flops_executed() const {
    return engine_->flops();
}

}  // namespace demfit
