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

#include "demfit/planar.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

#include "demfit/logspace.h"

namespace demfit {

namespace {

using Complex = std::complex<double>;

double wrap_angle(double a) {
    return std::atan2(std::sin(a), std::cos(a));
}

double safe_log_cosh(double j) {
    double a = std::abs(j);
    return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

double coupling_from_prob(double theta, bool flipped) {
    double j = 0.5 * (std::log1p(-theta) - std::log(theta));
    j = std::clamp(j, -kMaxCoupling, kMaxCoupling);
    return flipped ? -j : j;
}

// ---- Segment geometry for embedding validation -----------------------------

struct Pt {
    double x, y;
};

double cross(Pt o, Pt a, Pt b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool on_segment(Pt p, Pt a, Pt b) {
    constexpr double eps = 1e-12;
    return std::abs(cross(a, b, p)) < eps && p.x >= std::min(a.x, b.x) - eps &&
           p.x <= std::max(a.x, b.x) + eps && p.y >= std::min(a.y, b.y) - eps &&
           p.y <= std::max(a.y, b.y) + eps;
}

bool segments_conflict(Pt a, Pt b, Pt c, Pt d, bool share_endpoint) {
    constexpr double eps = 1e-12;
    double d1 = cross(c, d, a);
    double d2 = cross(c, d, b);
    double d3 = cross(a, b, c);
    double d4 = cross(a, b, d);
    if (share_endpoint) {
        // Only collinear overlap is a genuine conflict.
        if (std::abs(d1) > eps || std::abs(d2) > eps) {
            return false;
        }
        // All four points collinear: conflict if the open segments overlap.
        double lo1 = std::min(a.x + a.y * 1e-3, b.x + b.y * 1e-3);
        (void)lo1;
        auto key = [&](Pt p) {
            return std::abs(b.x - a.x) > std::abs(b.y - a.y) ? p.x : p.y;
        };
        double a1 = key(a), b1 = key(b), c1 = key(c), e1 = key(d);
        double lo = std::max(std::min(a1, b1), std::min(c1, e1));
        double hi = std::min(std::max(a1, b1), std::max(c1, e1));
        return hi - lo > eps;
    }
    if (((d1 > eps && d2 < -eps) || (d1 < -eps && d2 > eps)) &&
        ((d3 > eps && d4 < -eps) || (d3 < -eps && d4 > eps))) {
        return true;
    }
    // Touching cases (an endpoint lying on the other segment) are also
    // rejected: a straight-line embedding must keep edges disjoint.
    if (on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)) {
        return true;
    }
    return false;
}

// ---- Kac-Ward core ----------------------------------------------------------

struct ExtraEdge {
    uint32_t u, v;
    double coupling;
};

struct KwEval {
    double log_z;
    std::vector<double> dlogz_dj;  // per graph edge; empty unless requested
};

KwEval kac_ward_eval(
    const DualSpinGraph &graph, const std::vector<ExtraEdge> &extras, bool with_grad) {
    struct Dir {
        uint32_t from, to;
        double angle;
        double tanh_j;
        double sech2_j;
        int64_t edge;  // graph edge index, or -1 for extras
    };
    std::vector<Dir> dirs;
    std::vector<double> loop_sum_grad;
    double log_z = static_cast<double>(graph.n_vertices()) * std::log(2.0);
    KwEval out;
    if (with_grad) {
        out.dlogz_dj.assign(graph.edges.size(), 0.0);
    }

    auto add_edge = [&](uint32_t u, uint32_t v, double j, int64_t index) {
        double t = std::tanh(j);
        double c = std::cosh(j);
        double s2 = 1.0 / (c * c);
        double ax = graph.vertices[v].x - graph.vertices[u].x;
        double ay = graph.vertices[v].y - graph.vertices[u].y;
        double ang = std::atan2(ay, ax);
        dirs.push_back({u, v, ang, t, s2, index});
        dirs.push_back({v, u, wrap_angle(ang + M_PI), t, s2, index});
    };

    for (size_t k = 0; k < graph.edges.size(); k++) {
        const auto &e = graph.edges[k];
        if (e.u == e.v) {
            // Self-loop: constant contribution e^{J}.
            log_z += e.coupling;
            if (with_grad) {
                out.dlogz_dj[k] = 1.0;
            }
            continue;
        }
        log_z += safe_log_cosh(e.coupling);
        add_edge(e.u, e.v, e.coupling, static_cast<int64_t>(k));
    }
    for (const auto &x : extras) {
        log_z += safe_log_cosh(x.coupling);
        add_edge(x.u, x.v, x.coupling, -1);
    }

    size_t nd = dirs.size();
    if (nd == 0) {
        return {log_z, std::move(out.dlogz_dj)};
    }

    // Directed edges leaving each vertex.
    std::vector<std::vector<uint32_t>> leaving(graph.n_vertices());
    for (size_t d = 0; d < nd; d++) {
        leaving[dirs[d].from].push_back(static_cast<uint32_t>(d));
    }

    // Transitions a -> b with b starting where a ends, excluding immediate
    // reversal; phase exp(i * turn / 2).
    std::vector<std::vector<std::pair<uint32_t, Complex>>> into(nd);
    for (size_t a = 0; a < nd; a++) {
        for (uint32_t b : leaving[dirs[a].to]) {
            if ((b ^ 1) == a) {
                continue;
            }
            double turn = wrap_angle(dirs[b].angle - dirs[a].angle);
            Complex phase = std::exp(Complex(0.0, 0.5 * turn));
            into[b].emplace_back(static_cast<uint32_t>(a), phase);
        }
    }

    Eigen::MatrixXcd a_mat = Eigen::MatrixXcd::Identity(
        static_cast<Eigen::Index>(nd), static_cast<Eigen::Index>(nd));
    for (size_t b = 0; b < nd; b++) {
        for (const auto &[a, phase] : into[b]) {
            a_mat(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) -=
                phase * dirs[b].tanh_j;
        }
    }

    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(a_mat);
    const auto &lu_mat = lu.matrixLU();
    double log_abs = 0.0;
    double phase_acc = 0.0;
    for (Eigen::Index i = 0; i < lu_mat.rows(); i++) {
        Complex u = lu_mat(i, i);
        double mag = std::abs(u);
        if (!(mag > 0.0) || !std::isfinite(mag)) {
            throw std::runtime_error("Kac-Ward determinant is singular or non-finite");
        }
        log_abs += std::log(mag);
        phase_acc = wrap_angle(phase_acc + std::arg(u));
    }
    if (lu.permutationP().determinant() < 0) {
        phase_acc = wrap_angle(phase_acc + M_PI);
    }
    log_z += 0.5 * log_abs;
    if (!std::isfinite(log_z)) {
        throw std::runtime_error("Kac-Ward log Z is non-finite");
    }
    // The determinant is the square of a real even-subgraph sum; a residual
    // phase signals a broken embedding or conditioning failure.
    if (std::abs(phase_acc) > 1e-8 * std::max(1.0, std::abs(log_z))) {
        throw std::runtime_error(
            "Kac-Ward determinant has non-real phase " + std::to_string(phase_acc) +
            " (log Z = " + std::to_string(log_z) + "); embedding is inconsistent");
    }

    if (with_grad) {
        Eigen::MatrixXcd inv = lu.inverse();
        for (size_t b = 0; b < nd; b++) {
            if (dirs[b].edge < 0) {
                continue;
            }
            Complex acc = 0.0;
            for (const auto &[a, phase] : into[b]) {
                acc += inv(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) * phase;
            }
            out.dlogz_dj[static_cast<size_t>(dirs[b].edge)] -= 0.5 * dirs[b].sech2_j * acc.real();
        }
        for (size_t k = 0; k < graph.edges.size(); k++) {
            if (graph.edges[k].u != graph.edges[k].v) {
                out.dlogz_dj[k] += std::tanh(graph.edges[k].coupling);
            }
        }
    }
    out.log_z = log_z;
    return out;
}

struct CosetPairLogZ {
    double log_z_plus;
    double log_z_minus;
};

// Both coset partition functions from two conditioned evaluations:
//   Z(+l) = e^{l} Z_same + e^{-l} Z_diff,  Z(-l) mirrored.
CosetPairLogZ coset_pair_log_z(const DualSpinGraph &graph) {
    if (graph.logical_spin == kNoSpin || graph.auxiliary_spin == kNoSpin) {
        return {kac_ward_eval(graph, {}, false).log_z, kNegInf};
    }
    constexpr double lambda = 1.0;
    double za = kac_ward_eval(graph, {{graph.logical_spin, graph.auxiliary_spin, lambda}}, false).log_z;
    double zb = kac_ward_eval(graph, {{graph.logical_spin, graph.auxiliary_spin, -lambda}}, false).log_z;
    double denom = std::log(2.0 * std::sinh(2.0 * lambda));
    return {log_sub(za + lambda, zb - lambda) - denom, log_sub(zb + lambda, za - lambda) - denom};
}

}  // namespace

std::vector<std::vector<uint32_t>> DualSpinGraph::embedding() const {
    std::vector<std::vector<std::pair<double, uint32_t>>> ang(vertices.size());
    std::vector<std::vector<uint32_t>> loops(vertices.size());
    for (uint32_t k = 0; k < edges.size(); k++) {
        const auto &e = edges[k];
        if (e.u == e.v) {
            loops[e.u].push_back(k);
            continue;
        }
        double dx = vertices[e.v].x - vertices[e.u].x;
        double dy = vertices[e.v].y - vertices[e.u].y;
        ang[e.u].emplace_back(std::atan2(dy, dx), k);
        ang[e.v].emplace_back(std::atan2(-dy, -dx), k);
    }
    std::vector<std::vector<uint32_t>> order(vertices.size());
    for (size_t v = 0; v < vertices.size(); v++) {
        std::sort(ang[v].begin(), ang[v].end());
        for (const auto &[a, k] : ang[v]) {
            order[v].push_back(k);
        }
        for (uint32_t k : loops[v]) {
            order[v].push_back(k);
        }
    }
    return order;
}

void DualSpinGraph::validate() const {
    for (const auto &e : edges) {
        if (e.u >= vertices.size() || e.v >= vertices.size()) {
            throw std::runtime_error("dual graph edge references missing vertex");
        }
        if (!std::isfinite(e.coupling)) {
            throw std::runtime_error("dual graph has non-finite coupling");
        }
    }
    // Straight-line drawing check: no two non-loop segments may cross,
    // touch, or overlap (shared endpoints aside).
    for (size_t i = 0; i < edges.size(); i++) {
        if (edges[i].u == edges[i].v) {
            continue;
        }
        Pt a{vertices[edges[i].u].x, vertices[edges[i].u].y};
        Pt b{vertices[edges[i].v].x, vertices[edges[i].v].y};
        for (size_t j = i + 1; j < edges.size(); j++) {
            if (edges[j].u == edges[j].v) {
                continue;
            }
            Pt c{vertices[edges[j].u].x, vertices[edges[j].u].y};
            Pt d{vertices[edges[j].v].x, vertices[edges[j].v].y};
            bool share = edges[i].u == edges[j].u || edges[i].u == edges[j].v ||
                         edges[i].v == edges[j].u || edges[i].v == edges[j].v;
            if (segments_conflict(a, b, c, d, share)) {
                throw std::runtime_error(
                    "dual graph drawing is not planar: edges " + std::to_string(i) + " and " +
                    std::to_string(j) + " conflict");
            }
        }
    }
    // Euler check on the embedding-derived faces (self-loops excluded; each
    // would add exactly one face and one edge).
    auto order = embedding();
    std::vector<std::vector<uint32_t>> pos_in_order(vertices.size());
    size_t n_dir = 0;
    std::map<std::pair<uint32_t, uint32_t>, size_t> dir_id;  // (edge, 0/1)
    std::vector<std::pair<uint32_t, int>> dir_list;
    for (uint32_t k = 0; k < edges.size(); k++) {
        if (edges[k].u == edges[k].v) {
            continue;
        }
        dir_id[{k, 0}] = n_dir++;
        dir_list.emplace_back(k, 0);
        dir_id[{k, 1}] = n_dir++;
        dir_list.emplace_back(k, 1);
    }
    auto head = [&](uint32_t k, int rev) {
        return rev ? edges[k].u : edges[k].v;
    };
    std::vector<size_t> next(n_dir);
    for (size_t d = 0; d < n_dir; d++) {
        auto [k, rev] = dir_list[d];
        uint32_t v = head(k, rev);
        const auto &rot = order[v];
        size_t idx = 0;
        for (size_t q = 0; q < rot.size(); q++) {
            if (rot[q] == k) {
                idx = q;
                // A multi-edge pair at the same vertex is excluded by the
                // crossing check above, so the first match is the edge.
                break;
            }
        }
        uint32_t nk = rot[(idx + rot.size() - 1) % rot.size()];
        int nrev = edges[nk].u == v ? 0 : 1;
        next[d] = dir_id[{nk, nrev}];
    }
    std::vector<bool> seen(n_dir, false);
    size_t faces = 0;
    for (size_t d = 0; d < n_dir; d++) {
        if (seen[d]) {
            continue;
        }
        faces++;
        size_t cur = d;
        while (!seen[cur]) {
            seen[cur] = true;
            cur = next[cur];
        }
    }
    // Face tracing yields each component's own outer face, so per component
    // with edges V_c - E_c + F_c = 2 and summed:
    //   (V - edgeless) - E + F = 2 * #components_with_edges.
    if (n_dir > 0) {
        std::vector<uint32_t> parent(vertices.size());
        for (uint32_t v = 0; v < parent.size(); v++) {
            parent[v] = v;
        }
        auto find = [&](uint32_t x) {
            while (parent[x] != x) {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            return x;
        };
        size_t n_nonloop = 0;
        std::vector<bool> has_edge(vertices.size(), false);
        for (const auto &e : edges) {
            if (e.u != e.v) {
                parent[find(e.u)] = find(e.v);
                has_edge[e.u] = has_edge[e.v] = true;
                n_nonloop++;
            }
        }
        std::set<uint32_t> roots;
        size_t edgeless = 0;
        for (uint32_t v = 0; v < vertices.size(); v++) {
            if (has_edge[v]) {
                roots.insert(find(v));
            } else {
                edgeless++;
            }
        }
        long long lhs = static_cast<long long>(vertices.size() - edgeless) -
                        static_cast<long long>(n_nonloop) + static_cast<long long>(faces);
        long long rhs = 2 * static_cast<long long>(roots.size());
        if (lhs != rhs) {
            throw std::runtime_error(
                "dual graph embedding fails the Euler check: V-E+F = " + std::to_string(lhs) +
                ", expected " + std::to_string(rhs));
        }
    }
}

PartitionResult kac_ward_log_partition(const DualSpinGraph &graph, FixLogical fix, bool with_grad) {
    PartitionResult res;
    res.const_term = 0.0;  // const term is owned by the model-level wrapper
    if (fix == FixLogical::kFree) {
        auto kw = kac_ward_eval(graph, {}, with_grad);
        res.log_z = kw.log_z;
        res.grad_j = std::move(kw.dlogz_dj);
        return res;
    }
    if (with_grad) {
        throw std::invalid_argument("gradients are only available for the free partition function");
    }
    CosetPairLogZ pair = coset_pair_log_z(graph);
    res.log_z = fix == FixLogical::kPlus ? pair.log_z_plus : pair.log_z_minus;
    return res;
}

// ---- Model layout -----------------------------------------------------------

namespace {

constexpr uint32_t kBoundaryVertex = UINT32_MAX;

struct Layout {
    // Grid shape.
    size_t n_cols = 0;
    size_t n_rows = 0;
    std::vector<uint32_t> col_of;  // per detector
    std::vector<uint32_t> row_of;
    // Mechanisms that enter the spin graph, with primal endpoints
    // (kBoundaryVertex for the virtual boundary vertex).
    struct PrimalEdge {
        uint32_t mechanism;
        uint32_t a, b;  // detector ids or kBoundaryVertex
    };
    std::vector<PrimalEdge> primal;
    std::vector<uint32_t> detached;  // mechanisms with no detectors
    // Dual structure.
    std::vector<SpinVertex> face_pos;
    std::vector<std::array<uint32_t, 2>> dual_ends;  // per primal edge
    uint32_t logical_spin = kNoSpin;
    uint32_t auxiliary_spin = kNoSpin;
};

// Traces the faces of the primal matching graph from its rotation system
// and assigns drawing coordinates to each face.
void build_dual_structure(const DetectorErrorModel &model, Layout &lay) {
    size_t n_edges = lay.primal.size();
    size_t n_dir = 2 * n_edges;
    auto tail = [&](size_t d) {
        const auto &pe = lay.primal[d / 2];
        return (d & 1) ? pe.b : pe.a;
    };
    auto head = [&](size_t d) {
        const auto &pe = lay.primal[d / 2];
        return (d & 1) ? pe.a : pe.b;
    };

    // Rotation at detectors: counterclockwise by geometric direction, where
    // boundary edges point left from column 0 and right from the last
    // column. Rotation at the boundary vertex: right-column edges by row
    // descending, then left-column edges by row ascending.
    std::vector<std::vector<uint32_t>> rotation_det(model.n_detectors);
    std::vector<std::pair<double, uint32_t>> b_left, b_right;
    std::vector<std::vector<std::pair<double, uint32_t>>> det_ang(model.n_detectors);
    for (size_t d = 0; d < n_dir; d++) {
        uint32_t u = tail(d);
        uint32_t v = head(d);
        if (u == kBoundaryVertex) {
            // Ordered below.
            double row = lay.row_of[v];
            if (lay.col_of[v] == 0) {
                b_left.emplace_back(row, static_cast<uint32_t>(d));
            } else {
                b_right.emplace_back(row, static_cast<uint32_t>(d));
            }
            continue;
        }
        double dx, dy;
        if (v == kBoundaryVertex) {
            dx = lay.col_of[u] == 0 ? -1.0 : 1.0;
            dy = 0.0;
        } else {
            dx = static_cast<double>(lay.col_of[v]) - lay.col_of[u];
            dy = static_cast<double>(lay.row_of[v]) - lay.row_of[u];
        }
        det_ang[u].emplace_back(std::atan2(dy, dx), static_cast<uint32_t>(d));
    }
    for (size_t v = 0; v < model.n_detectors; v++) {
        std::sort(det_ang[v].begin(), det_ang[v].end());
        for (const auto &[a, d] : det_ang[v]) {
            rotation_det[v].push_back(d);
        }
        for (size_t q = 1; q < det_ang[v].size(); q++) {
            if (det_ang[v][q].first == det_ang[v][q - 1].first) {
                throw std::runtime_error(
                    "planar layout: two mechanisms leave detector D" + std::to_string(v) +
                    " in the same direction (parallel edges are not embeddable)");
            }
        }
    }
    std::sort(b_right.begin(), b_right.end(), [](auto &a, auto &b) { return a.first > b.first; });
    std::sort(b_left.begin(), b_left.end());
    std::vector<uint32_t> rotation_b;
    for (const auto &[row, d] : b_right) {
        rotation_b.push_back(d);
    }
    for (const auto &[row, d] : b_left) {
        rotation_b.push_back(d);
    }

    auto rotation_at = [&](uint32_t v) -> const std::vector<uint32_t> & {
        return v == kBoundaryVertex ? rotation_b : rotation_det[v];
    };

    // next(d) = directed edge after reverse(d), one step clockwise in the
    // rotation at head(d); orbits of `next` are the faces.
    std::vector<uint32_t> next(n_dir);
    for (size_t d = 0; d < n_dir; d++) {
        uint32_t v = head(d);
        const auto &rot = rotation_at(v);
        size_t idx = SIZE_MAX;
        uint32_t rev = static_cast<uint32_t>(d ^ 1);
        for (size_t q = 0; q < rot.size(); q++) {
            if (rot[q] == rev) {
                idx = q;
                break;
            }
        }
        if (idx == SIZE_MAX) {
            throw std::runtime_error("planar layout: rotation system is inconsistent");
        }
        next[d] = rot[(idx + rot.size() - 1) % rot.size()];
    }

    std::vector<uint32_t> face_of(n_dir, UINT32_MAX);
    uint32_t n_faces = 0;
    for (size_t d = 0; d < n_dir; d++) {
        if (face_of[d] != UINT32_MAX) {
            continue;
        }
        uint32_t f = n_faces++;
        size_t cur = d;
        while (face_of[cur] == UINT32_MAX) {
            face_of[cur] = f;
            cur = next[cur];
        }
    }

    // Euler check for the primal graph: all detectors plus one boundary
    // vertex (when used) must satisfy V - E + F = 2 per component; the
    // matching graphs handled here are connected.
    bool uses_boundary = !b_left.empty() || !b_right.empty();
    long long v_count = static_cast<long long>(model.n_detectors) + (uses_boundary ? 1 : 0);
    long long euler = v_count - static_cast<long long>(n_edges) + static_cast<long long>(n_faces);
    if (euler != 2) {
        throw std::runtime_error(
            "matching graph rotation system is not planar (V-E+F = " + std::to_string(euler) +
            "); layout unsupported");
    }

    // Face coordinates.
    struct FaceInfo {
        std::set<uint32_t> dets;
        bool has_b = false;
        bool left_bnd = false;
        bool right_bnd = false;
    };
    std::vector<FaceInfo> info(n_faces);
    for (size_t d = 0; d < n_dir; d++) {
        FaceInfo &fi = info[face_of[d]];
        uint32_t u = tail(d);
        if (u == kBoundaryVertex) {
            fi.has_b = true;
        } else {
            fi.dets.insert(u);
        }
        uint32_t other = head(d);
        uint32_t det = u == kBoundaryVertex ? other : (other == kBoundaryVertex ? u : UINT32_MAX);
        if (other == kBoundaryVertex) {
            fi.has_b = true;
        }
        if (det != UINT32_MAX) {
            if (lay.col_of[det] == 0) {
                fi.left_bnd = true;
            } else {
                fi.right_bnd = true;
            }
        }
    }
    double max_col = static_cast<double>(lay.n_cols - 1);
    double max_row = static_cast<double>(lay.n_rows - 1);
    lay.face_pos.resize(n_faces);
    for (uint32_t f = 0; f < n_faces; f++) {
        const FaceInfo &fi = info[f];
        double mx = 0.0, my = 0.0;
        for (uint32_t det : fi.dets) {
            mx += lay.col_of[det];
            my += lay.row_of[det];
        }
        if (!fi.dets.empty()) {
            mx /= static_cast<double>(fi.dets.size());
            my /= static_cast<double>(fi.dets.size());
        }
        if (!fi.has_b) {
            lay.face_pos[f] = {mx, my};
        } else if (fi.left_bnd && fi.right_bnd) {
            // Outer face above or below the grid; drawn far left so the
            // conditioning edge between the two outer faces has a clear
            // corridor.
            bool top = my >= max_row / 2.0;
            lay.face_pos[f] = {-1.8, top ? max_row + 1.2 : -1.2};
        } else if (fi.left_bnd) {
            lay.face_pos[f] = {-0.6, my};
        } else if (fi.right_bnd) {
            lay.face_pos[f] = {max_col + 0.6, my};
        } else {
            throw std::runtime_error("planar layout: face touches boundary vertex without boundary edges");
        }
    }

    lay.dual_ends.resize(n_edges);
    for (size_t k = 0; k < n_edges; k++) {
        lay.dual_ends[k] = {face_of[2 * k], face_of[2 * k + 1]};
    }

    // The logical and auxiliary spins are the odd-degree endpoints of the
    // dual subgraph formed by the logical mechanisms' edges; self-loops
    // never enter any cut and are ignored.
    std::vector<uint32_t> odd_deg(n_faces, 0);
    bool any_logical_edge = false;
    for (size_t k = 0; k < n_edges; k++) {
        if (!model.mechanisms[lay.primal[k].mechanism].flips_logical) {
            continue;
        }
        any_logical_edge = true;
        auto [fu, fv] = lay.dual_ends[k];
        if (fu != fv) {
            odd_deg[fu] ^= 1;
            odd_deg[fv] ^= 1;
        }
    }
    std::vector<uint32_t> odds;
    for (uint32_t f = 0; f < n_faces; f++) {
        if (odd_deg[f]) {
            odds.push_back(f);
        }
    }
    if (odds.size() == 2) {
        lay.logical_spin = odds[0];
        lay.auxiliary_spin = odds[1];
    } else if (odds.empty()) {
        // No logical cycle: the observable is determined by the syndrome
        // (or absent). Coset splitting degenerates gracefully.
        lay.logical_spin = kNoSpin;
        lay.auxiliary_spin = kNoSpin;
        (void)any_logical_edge;
    } else {
        throw std::runtime_error(
            "logical mechanisms do not form a boundary-to-boundary chain; layout unsupported");
    }
}

Layout build_layout(const DetectorErrorModel &model) {
    Layout lay;
    size_t m = model.n_detectors;
    if (m == 0) {
        throw std::runtime_error("planar construction needs at least one detector");
    }
    if (model.detector_coords.size() != m) {
        throw std::runtime_error("planar construction needs detector coordinates for the grid layout");
    }
    // Map (space, round) coordinates onto dense grid indices.
    std::set<double> xs, ts;
    for (size_t d = 0; d < m; d++) {
        const auto &c = model.detector_coords[d];
        if (c.size() < 2) {
            throw std::runtime_error(
                "detector D" + std::to_string(d) + " needs (space, round) coordinates");
        }
        xs.insert(c.front());
        ts.insert(c.back());
    }
    std::vector<double> xv(xs.begin(), xs.end());
    std::vector<double> tv(ts.begin(), ts.end());
    lay.n_cols = xv.size();
    lay.n_rows = tv.size();
    lay.col_of.resize(m);
    lay.row_of.resize(m);
    std::set<std::pair<uint32_t, uint32_t>> filled;
    for (size_t d = 0; d < m; d++) {
        const auto &c = model.detector_coords[d];
        uint32_t col = static_cast<uint32_t>(
            std::lower_bound(xv.begin(), xv.end(), c.front()) - xv.begin());
        uint32_t row = static_cast<uint32_t>(
            std::lower_bound(tv.begin(), tv.end(), c.back()) - tv.begin());
        lay.col_of[d] = col;
        lay.row_of[d] = row;
        if (!filled.insert({col, row}).second) {
            throw std::runtime_error("two detectors share a grid position; layout unsupported");
        }
    }
    if (filled.size() != lay.n_cols * lay.n_rows) {
        throw std::runtime_error("detector grid has holes; layout unsupported");
    }

    for (uint32_t i = 0; i < model.n_mechanisms(); i++) {
        const auto &mech = model.mechanisms[i];
        if (mech.detectors.size() > 2) {
            throw std::runtime_error(
                "mechanism " + std::to_string(i) + " triggers " +
                std::to_string(mech.detectors.size()) + " detectors; model is not graphlike");
        }
        if (mech.detectors.empty()) {
            lay.detached.push_back(i);
            continue;
        }
        Layout::PrimalEdge pe;
        pe.mechanism = i;
        if (mech.detectors.size() == 2) {
            pe.a = mech.detectors[0];
            pe.b = mech.detectors[1];
            long long dc = static_cast<long long>(lay.col_of[pe.b]) - lay.col_of[pe.a];
            long long dr = static_cast<long long>(lay.row_of[pe.b]) - lay.row_of[pe.a];
            if (std::abs(dc) > 1 || std::abs(dr) > 1 || (dc == 0 && dr == 0)) {
                throw std::runtime_error(
                    "mechanism " + std::to_string(i) + " connects non-adjacent grid detectors");
            }
        } else {
            uint32_t det = mech.detectors[0];
            uint32_t col = lay.col_of[det];
            if (col != 0 && col + 1 != lay.n_cols) {
                throw std::runtime_error(
                    "boundary mechanism " + std::to_string(i) +
                    " touches an interior column; layout unsupported");
            }
            pe.a = det;
            pe.b = kBoundaryVertex;
        }
        lay.primal.push_back(pe);
    }

    build_dual_structure(model, lay);
    return lay;
}

DualSpinGraph graph_from_layout(
    const Layout &lay, const ErrorConfig &e, const std::vector<double> &theta) {
    DualSpinGraph g;
    g.vertices = lay.face_pos;
    g.logical_spin = lay.logical_spin;
    g.auxiliary_spin = lay.auxiliary_spin;
    g.edges.reserve(lay.primal.size());
    for (size_t k = 0; k < lay.primal.size(); k++) {
        uint32_t mech = lay.primal[k].mechanism;
        SpinEdge edge;
        edge.u = lay.dual_ends[k][0];
        edge.v = lay.dual_ends[k][1];
        edge.mechanism = mech;
        edge.coupling = coupling_from_prob(theta[mech], e.get(mech));
        g.edges.push_back(edge);
    }
    return g;
}

double const_term_for(const Layout &lay, const std::vector<double> &theta) {
    double c = 0.0;
    for (const auto &pe : lay.primal) {
        double t = theta[pe.mechanism];
        c += 0.5 * (std::log(t) + std::log1p(-t));
    }
    return c;
}

}  // namespace

DualSpinGraph build_dual_graph(
    const DetectorErrorModel &model, const ErrorConfig &e, const std::vector<double> &theta) {
    if (e.n != model.n_mechanisms() || theta.size() != model.n_mechanisms()) {
        throw std::invalid_argument("error configuration / prior length mismatch");
    }
    Layout lay = build_layout(model);
    DualSpinGraph g = graph_from_layout(lay, e, theta);
    g.validate();
    return g;
}

// ---- PlanarSolver -----------------------------------------------------------

struct PlanarSolver::Impl {
    DetectorErrorModel model;
    Layout layout;
    PureErrorSolver pure;

    Impl(const DetectorErrorModel &m) : model(m), layout(build_layout(m)), pure(m) {
        // Validate the drawing once; per-syndrome graphs only change
        // coupling values, never the geometry.
        DualSpinGraph g = graph_from_layout(layout, ErrorConfig(model.n_mechanisms()),
                                            std::vector<double>(model.n_mechanisms(), 0.5));
        g.validate();
    }
};

PlanarSolver::PlanarSolver(const DetectorErrorModel &model) : impl_(new Impl(model)) {
}
PlanarSolver::~PlanarSolver() = default;
PlanarSolver::PlanarSolver(PlanarSolver &&) noexcept = default;
PlanarSolver &PlanarSolver::operator=(PlanarSolver &&) noexcept = default;

DualSpinGraph PlanarSolver::graph_for(
    const std::vector<double> &theta, const BitVec &syndrome) const {
    ErrorConfig e = impl_->pure.solve(syndrome);
    return graph_from_layout(impl_->layout, e, theta);
}

const PureErrorSolver &PlanarSolver::pure_errors() const {
    return impl_->pure;
}

double PlanarSolver::log_prob(const std::vector<double> &theta, const BitVec &syndrome) const {
    DualSpinGraph g = graph_for(theta, syndrome);
    auto part = kac_ward_log_partition(g, FixLogical::kFree, false);
    return -std::log(2.0) + part.log_z + const_term_for(impl_->layout, theta);
}

double PlanarSolver::log_prob_with_grad(
    const std::vector<double> &theta, const BitVec &syndrome, std::vector<double> *grad) const {
    ErrorConfig e = impl_->pure.solve(syndrome);
    DualSpinGraph g = graph_from_layout(impl_->layout, e, theta);
    auto part = kac_ward_log_partition(g, FixLogical::kFree, true);
    grad->assign(impl_->model.n_mechanisms(), 0.0);
    for (size_t k = 0; k < g.edges.size(); k++) {
        uint32_t i = g.edges[k].mechanism;
        double t = theta[i];
        double dj_dtheta = (e.get(i) ? 1.0 : -1.0) / (2.0 * t * (1.0 - t));
        double dconst = (1.0 - 2.0 * t) / (2.0 * t * (1.0 - t));
        (*grad)[i] = part.grad_j[k] * dj_dtheta + dconst;
    }
    return -std::log(2.0) + part.log_z + const_term_for(impl_->layout, theta);
}

PlanarSolver::CosetLogZ PlanarSolver::coset_log_z(
    const std::vector<double> &theta, const BitVec &syndrome) const {
    ErrorConfig e = impl_->pure.solve(syndrome);
    DualSpinGraph g = graph_from_layout(impl_->layout, e, theta);
    CosetLogZ out;
    out.const_term = const_term_for(impl_->layout, theta);
    out.ref_logical = syndrome_of(impl_->model, e).logical;
    out.log_z_free = kac_ward_eval(g, {}, false).log_z;
    CosetPairLogZ pair = coset_pair_log_z(g);
    out.log_z_plus = pair.log_z_plus;
    out.log_z_minus = pair.log_z_minus;
    return out;
}

double log_prob_planar(
    const DetectorErrorModel &model, const std::vector<double> &theta, const BitVec &syndrome) {
    return PlanarSolver(model).log_prob(theta, syndrome);
}

std::vector<double> grad_log_prob_planar(
    const DetectorErrorModel &model,
    const std::vector<double> &theta,
    const BitVec &syndrome,
    double *log_prob_out) {
    PlanarSolver solver(model);
    std::vector<double> grad;
    double lp = solver.log_prob_with_grad(theta, syndrome, &grad);
    if (log_prob_out) {
        *log_prob_out = lp;
    }
    return grad;
}

}  // namespace demfit
