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

#ifndef DEMFIT_CODEGEN_H
#define DEMFIT_CODEGEN_H

// Built-in detector error model generators for memory experiments under
// uniform depolarizing noise. The circuit conventions and the fault ->
// mechanism mapping are documented in docs/generators.md.

#include <string>

#include "demfit/dem.h"

namespace demfit {

// Bit-flip repetition code, d data qubits, r measurement rounds plus a final
// data readout. Detectors sit on a (check, round) grid with coordinates
// (j, t); m = (d-1)(r+1). The model is graphlike and planar. The logical
// observable is the readout of data qubit 0, so boundary mechanisms on the
// j=0 side carry the logical flag.
DetectorErrorModel generate_repetition_dem(int distance, int rounds, double error_rate);

// Rotated surface code, Z-basis memory. Z-stabilizer detectors exist for
// rounds 1..r+1 (r+1 is the final data readout comparison), X-stabilizer
// detectors for rounds 2..r. Detector coordinates are (x, y, round) with
// plaquette centers at half-integers. Mechanisms include per-epoch data
// depolarizing (X, Y, Z components), measurement flips, and final readout
// flips; Y components give weight-up-to-4 hyperedges.
DetectorErrorModel generate_surface_dem(int distance, int rounds, double error_rate);

// Dispatch by code family name ("repetition" or "surface").
DetectorErrorModel generate_dem(const std::string &code, int distance, int rounds, double error_rate);

// Test helper: keeps the first `max_mechanisms` mechanisms and drops
// detectors that become untouched, reindexing densely.
DetectorErrorModel truncate_mechanisms(const DetectorErrorModel &model, size_t max_mechanisms);

}  // namespace demfit

#endif
