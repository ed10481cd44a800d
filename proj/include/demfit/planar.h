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

#ifndef DEMFIT_PLANAR_H
#define DEMFIT_PLANAR_H

#include <cstdint>
#include <memory>
#include <vector>

#include "demfit/dem.h"

namespace demfit {

constexpr uint32_t kNoSpin = UINT32_MAX;

// Couplings are capped at this magnitude; the probability clamp already
// keeps |J| near 10, so the cap only guards hand-built graphs.
constexpr double kMaxCoupling = 20.0;

struct SpinVertex {
    double x = 0.0;
    double y = 0.0;
};

struct SpinEdge {
    uint32_t u = 0;
    uint32_t v = 0;  // u == v is a self-loop; it contributes a constant e^J
    uint32_t mechanism = UINT32_MAX;
    double coupling = 0.0;
};

// Ising model on the faces of an embedded matching graph. Vertex positions
// define a straight-line planar drawing; the counterclockwise edge order at
// each vertex (the combinatorial embedding) follows from them.
struct DualSpinGraph {
    std::vector<SpinVertex> vertices;
    std::vector<SpinEdge> edges;
    uint32_t logical_spin = kNoSpin;
    uint32_t auxiliary_spin = kNoSpin;

    size_t n_vertices() const {
        return vertices.size();
    }
    // Cyclic counterclockwise order of incident edge indices per vertex,
    // derived from the drawing.
    std::vector<std::vector<uint32_t>> embedding() const;
    // Checks that the drawing is a valid planar embedding: no two edge
    // segments cross or overlap, and the face count satisfies Euler's
    // formula. Throws std::runtime_error on violation.
    void validate() const;
};

enum class FixLogical {
    kFree,   // sum over both logical cosets
    kPlus,   // configurations in the same coset as the reference error
    kMinus,  // configurations in the opposite coset
};

struct PartitionResult {
    double log_z = 0.0;
    // d log Z / d J_i per edge, filled when requested.
    std::vector<double> grad_j;
    // 0.5 * sum_i log(theta_i (1 - theta_i)) over the graph's mechanisms.
    double const_term = 0.0;
};

// Builds the dual spin model for a graphlike DEM laid out on a (space,
// round) grid, with couplings J_i = (-1)^{e_i} * 0.5 * log((1-theta_i)/theta_i).
// The logical and auxiliary spins are the two faces at the ends of the
// chain of logical boundary edges. Throws on non-graphlike mechanisms or
// layouts this construction cannot embed.
DualSpinGraph build_dual_graph(
    const DetectorErrorModel &model, const ErrorConfig &e, const std::vector<double> &theta);

// Exact log partition function via the Kac-Ward determinant:
//   log Z = V log 2 + sum_e log cosh J_e + 0.5 * log det(I - K),
// where K is the transition operator over directed edges with phases
// exp(i * turn/2) from the drawing. Pinning the logical coset is done by
// two further evaluations with a conditioning edge between the logical and
// auxiliary spins. Gradients are only available for kFree.
PartitionResult kac_ward_log_partition(
    const DualSpinGraph &graph, FixLogical fix = FixLogical::kFree, bool with_grad = false);

// log p_theta(s) = -log 2 + log Z(free) + const_term, with the dual graph
// built from a pure error of s. Invariant under the choice of pure error.
double log_prob_planar(
    const DetectorErrorModel &model, const std::vector<double> &theta, const BitVec &syndrome);

// d log p / d theta_i for every mechanism. Mechanisms that touch no
// detector do not affect the syndrome distribution and get gradient zero.
std::vector<double> grad_log_prob_planar(
    const DetectorErrorModel &model,
    const std::vector<double> &theta,
    const BitVec &syndrome,
    double *log_prob_out = nullptr);

// Reusable solver: the grid layout, face structure, phase factors, and the
// GF(2) factorization are computed once per model and shared across
// syndromes and prior updates.
class PlanarSolver {
  public:
    explicit PlanarSolver(const DetectorErrorModel &model);
    ~PlanarSolver();
    PlanarSolver(PlanarSolver &&) noexcept;
    PlanarSolver &operator=(PlanarSolver &&) noexcept;

    double log_prob(const std::vector<double> &theta, const BitVec &syndrome) const;
    double log_prob_with_grad(
        const std::vector<double> &theta, const BitVec &syndrome, std::vector<double> *grad) const;

    struct CosetLogZ {
        double log_z_plus;   // same coset as the reference error
        double log_z_minus;  // opposite coset (-inf when unreachable)
        double log_z_free;
        double const_term;
        bool ref_logical;  // logical action of the reference pure error
    };
    CosetLogZ coset_log_z(const std::vector<double> &theta, const BitVec &syndrome) const;

    DualSpinGraph graph_for(const std::vector<double> &theta, const BitVec &syndrome) const;
    const PureErrorSolver &pure_errors() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace demfit

#endif
