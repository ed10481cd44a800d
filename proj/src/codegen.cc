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

#include "demfit/codegen.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

namespace demfit {

namespace {

void check_params(int distance, int rounds) {
    if (distance < 3 || distance % 2 == 0) {
        throw std::invalid_argument("distance must be odd and >= 3");
    }
    if (rounds < 1) {
        throw std::invalid_argument("rounds must be >= 1");
    }
}

void set_metadata(DetectorErrorModel &model, const std::string &code, int d, int r, double eps) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", eps);
    model.metadata["code"] = code;
    model.metadata["d"] = std::to_string(d);
    model.metadata["r"] = std::to_string(r);
    model.metadata["error_rate"] = buf;
}

}  // namespace

DetectorErrorModel generate_repetition_dem(int distance, int rounds, double error_rate) {
    check_params(distance, rounds);
    if (!(error_rate > 0.0 && error_rate < 1.0)) {
        throw std::invalid_argument("error rate must be in (0,1)");
    }
    int d = distance;
    int r = rounds;
    int checks = d - 1;
    DetectorErrorModel model;
    model.n_detectors = static_cast<size_t>(checks) * (r + 1);
    model.detector_coords.resize(model.n_detectors);
    auto det = [&](int j, int t) {
        return static_cast<uint32_t>(t * checks + j);
    };
    for (int t = 0; t <= r; t++) {
        for (int j = 0; j < checks; j++) {
            model.detector_coords[det(j, t)] = {static_cast<double>(j), static_cast<double>(t)};
        }
    }

    double p_data = 2.0 / 3.0 * error_rate;  // X or Y on a data qubit
    double p_meas = 2.0 / 3.0 * error_rate;  // ancilla depolarizing before readout
    double p_hook = 1.0 / 3.0 * error_rate;  // data flip between the two CNOT layers

    // Data qubit q flips between rounds (epoch t flips detector row t).
    for (int t = 0; t <= r; t++) {
        for (int q = 0; q < d; q++) {
            ErrorMechanism mech;
            mech.prob = p_data;
            if (q - 1 >= 0) {
                mech.detectors.push_back(det(q - 1, t));
            }
            if (q < checks) {
                mech.detectors.push_back(det(q, t));
            }
            mech.flips_logical = (q == 0);
            model.mechanisms.push_back(std::move(mech));
        }
    }
    // Measurement flips: time edges.
    for (int t = 0; t < r; t++) {
        for (int j = 0; j < checks; j++) {
            ErrorMechanism mech;
            mech.prob = p_meas;
            mech.detectors = {det(j, t), det(j, t + 1)};
            model.mechanisms.push_back(std::move(mech));
        }
    }
    // Mid-round data flips: check q reads data q before check q-1 reads it
    // again, so a flip in between is seen by check q-1 now and check q next
    // round.
    for (int t = 0; t < r; t++) {
        for (int q = 1; q < d - 1; q++) {
            ErrorMechanism mech;
            mech.prob = p_hook;
            mech.detectors = {det(q - 1, t), det(q, t + 1)};
            model.mechanisms.push_back(std::move(mech));
        }
    }

    set_metadata(model, "repetition", d, r, error_rate);
    model.canonicalize();
    return model;
}

DetectorErrorModel generate_surface_dem(int distance, int rounds, double error_rate) {
    check_params(distance, rounds);
    if (!(error_rate > 0.0 && error_rate < 1.0)) {
        throw std::invalid_argument("error rate must be in (0,1)");
    }
    int d = distance;
    int r = rounds;

    // Plaquette centers at (i+0.5, j+0.5), i,j in -1..d-1. Z-type when i+j
    // is even (weight-2 columns on the left/right edges), X-type when odd
    // (weight-2 rows on the top/bottom edges).
    struct Plaquette {
        double cx, cy;
        std::vector<std::pair<int, int>> qubits;
    };
    std::vector<Plaquette> z_plaq, x_plaq;
    for (int i = -1; i < d; i++) {
        for (int j = -1; j < d; j++) {
            bool z_type = ((i + j) % 2 + 2) % 2 == 0;
            std::vector<std::pair<int, int>> qubits;
            for (int dx = 0; dx <= 1; dx++) {
                for (int dy = 0; dy <= 1; dy++) {
                    int qx = i + dx, qy = j + dy;
                    if (qx >= 0 && qx < d && qy >= 0 && qy < d) {
                        qubits.emplace_back(qx, qy);
                    }
                }
            }
            if (qubits.size() == 4) {
                (z_type ? z_plaq : x_plaq).push_back({i + 0.5, j + 0.5, qubits});
            } else if (qubits.size() == 2) {
                bool vertical_edge = (i == -1 || i == d - 1);
                if (z_type && vertical_edge) {
                    z_plaq.push_back({i + 0.5, j + 0.5, qubits});
                } else if (!z_type && !vertical_edge && (j == -1 || j == d - 1)) {
                    x_plaq.push_back({i + 0.5, j + 0.5, qubits});
                }
            }
        }
    }
    size_t half = static_cast<size_t>(d) * d / 2;  // (d^2-1)/2 for odd d
    if (z_plaq.size() != half || x_plaq.size() != half) {
        throw std::logic_error("surface plaquette construction is inconsistent");
    }
    auto order_key = [](const Plaquette &p) {
        return std::make_pair(p.cy, p.cx);
    };
    std::sort(z_plaq.begin(), z_plaq.end(), [&](const Plaquette &a, const Plaquette &b) {
        return order_key(a) < order_key(b);
    });
    std::sort(x_plaq.begin(), x_plaq.end(), [&](const Plaquette &a, const Plaquette &b) {
        return order_key(a) < order_key(b);
    });

    DetectorErrorModel model;
    size_t nz = z_plaq.size();
    size_t nx = x_plaq.size();
    size_t z_rows = static_cast<size_t>(r) + 1;  // rounds 1..r plus final readout row r+1
    size_t x_rows = r >= 2 ? static_cast<size_t>(r) - 1 : 0;  // rounds 2..r
    model.n_detectors = nz * z_rows + nx * x_rows;
    model.detector_coords.resize(model.n_detectors);
    auto z_det = [&](size_t p, int t) {  // t in 1..r+1
        return static_cast<uint32_t>((t - 1) * nz + p);
    };
    auto x_det = [&](size_t p, int t) {  // t in 2..r
        return static_cast<uint32_t>(nz * z_rows + (t - 2) * nx + p);
    };
    for (int t = 1; t <= r + 1; t++) {
        for (size_t p = 0; p < nz; p++) {
            model.detector_coords[z_det(p, t)] = {z_plaq[p].cx, z_plaq[p].cy, static_cast<double>(t)};
        }
    }
    for (int t = 2; t <= r; t++) {
        for (size_t p = 0; p < nx; p++) {
            model.detector_coords[x_det(p, t)] = {x_plaq[p].cx, x_plaq[p].cy, static_cast<double>(t)};
        }
    }

    // Adjacency: data qubit -> plaquettes.
    std::map<std::pair<int, int>, std::vector<size_t>> z_of_qubit, x_of_qubit;
    for (size_t p = 0; p < nz; p++) {
        for (auto q : z_plaq[p].qubits) {
            z_of_qubit[q].push_back(p);
        }
    }
    for (size_t p = 0; p < nx; p++) {
        for (auto q : x_plaq[p].qubits) {
            x_of_qubit[q].push_back(p);
        }
    }
    // Logical Z readout: the bottom row of data qubits.
    auto in_logical = [&](std::pair<int, int> q) {
        return q.second == 0;
    };

    double p_comp = error_rate / 3.0;   // each Pauli component of depolarizing
    double p_meas = 2.0 / 3.0 * error_rate;
    double p_read = 2.0 / 3.0 * error_rate;

    // Data depolarizing: epoch t in 0..r (before measurement round t+1; the
    // epoch-r channel sits before the final readout).
    for (int t = 0; t <= r; t++) {
        for (int qx = 0; qx < d; qx++) {
            for (int qy = 0; qy < d; qy++) {
                std::pair<int, int> q{qx, qy};
                // X component: flips adjacent Z checks from round t+1 on;
                // only the comparison at row t+1 fires.
                ErrorMechanism x_mech;
                x_mech.prob = p_comp;
                for (size_t p : z_of_qubit[q]) {
                    x_mech.detectors.push_back(z_det(p, t + 1));
                }
                x_mech.flips_logical = in_logical(q);
                // Z component: fires X comparison at row t+1 when that
                // detector exists (epoch 0 and epoch >= r are invisible).
                ErrorMechanism z_mech;
                z_mech.prob = p_comp;
                if (t >= 1 && t + 1 <= r) {
                    for (size_t p : x_of_qubit[q]) {
                        z_mech.detectors.push_back(x_det(p, t + 1));
                    }
                }
                // Y component: both signatures combined.
                ErrorMechanism y_mech;
                y_mech.prob = p_comp;
                y_mech.detectors = x_mech.detectors;
                y_mech.detectors.insert(
                    y_mech.detectors.end(), z_mech.detectors.begin(), z_mech.detectors.end());
                y_mech.flips_logical = x_mech.flips_logical;
                model.mechanisms.push_back(std::move(x_mech));
                model.mechanisms.push_back(std::move(z_mech));
                model.mechanisms.push_back(std::move(y_mech));
            }
        }
    }
    // Measurement flips.
    for (int t = 1; t <= r; t++) {
        for (size_t p = 0; p < nz; p++) {
            ErrorMechanism mech;
            mech.prob = p_meas;
            mech.detectors = {z_det(p, t), z_det(p, t + 1)};
            model.mechanisms.push_back(std::move(mech));
        }
        for (size_t p = 0; p < nx; p++) {
            ErrorMechanism mech;
            mech.prob = p_meas;
            if (t >= 2) {
                mech.detectors.push_back(x_det(p, t));
            }
            if (t + 1 <= r) {
                mech.detectors.push_back(x_det(p, t + 1));
            }
            model.mechanisms.push_back(std::move(mech));
        }
    }
    // Final data readout flips.
    for (int qx = 0; qx < d; qx++) {
        for (int qy = 0; qy < d; qy++) {
            std::pair<int, int> q{qx, qy};
            ErrorMechanism mech;
            mech.prob = p_read;
            for (size_t p : z_of_qubit[q]) {
                mech.detectors.push_back(z_det(p, r + 1));
            }
            mech.flips_logical = in_logical(q);
            model.mechanisms.push_back(std::move(mech));
        }
    }

    set_metadata(model, "surface", d, r, error_rate);
    model.canonicalize();
    return model;
}

DetectorErrorModel generate_dem(const std::string &code, int distance, int rounds, double error_rate) {
    if (code == "repetition") {
        return generate_repetition_dem(distance, rounds, error_rate);
    }
    if (code == "surface") {
        return generate_surface_dem(distance, rounds, error_rate);
    }
    throw std::invalid_argument("unknown code family '" + code + "' (expected repetition or surface)");
}

DetectorErrorModel truncate_mechanisms(const DetectorErrorModel &model, size_t max_mechanisms) {
    DetectorErrorModel out;
    out.metadata = model.metadata;
    out.mechanisms.assign(
        model.mechanisms.begin(),
        model.mechanisms.begin() + std::min(max_mechanisms, model.mechanisms.size()));
    // Reindex the surviving detectors densely.
    std::map<uint32_t, uint32_t> remap;
    for (const auto &mech : out.mechanisms) {
        for (uint32_t d : mech.detectors) {
            remap.emplace(d, 0);
        }
    }
    uint32_t next = 0;
    for (auto &[old_index, new_index] : remap) {
        new_index = next++;
    }
    for (auto &mech : out.mechanisms) {
        for (auto &d : mech.detectors) {
            d = remap[d];
        }
    }
    out.n_detectors = next;
    if (!model.detector_coords.empty()) {
        out.detector_coords.resize(next);
        for (const auto &[old_index, new_index] : remap) {
            if (old_index < model.detector_coords.size()) {
                out.detector_coords[new_index] = model.detector_coords[old_index];
            }
        }
    }
    out.canonicalize();
    return out;
}

}  // namespace demfit
