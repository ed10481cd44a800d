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

#ifndef DEMFIT_MLE_H
#define DEMFIT_MLE_H

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "demfit/contract.h"
#include "demfit/dem.h"

namespace demfit {

enum class Backend {
    kPlanar,
    kTensorNetwork,
};

Backend parse_backend(std::string_view name);

// Trainable priors in logit parameterization: theta_i = sigmoid(phi_i), so
// optimization can never leave (0,1).
struct PriorParams {
    std::vector<double> phi;
    Backend backend = Backend::kPlanar;
    // Exact probabilities tracked alongside the logits so that a zero step
    // leaves them bit-identical (the logit map does not round-trip exactly).
    std::vector<double> theta_values;

    static PriorParams from_theta(const std::vector<double> &theta, Backend backend);
    std::vector<double> theta() const;
};

enum class OptimizerKind {
    kSgd,
    kAdam,
};

struct TrainConfig {
    int epochs = 500;
    size_t batch_size = 10000;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::kAdam;
    uint64_t seed = 0;
    int convergence_window = 20;
    double convergence_rel_tol = 1e-4;
    int threads = 1;
    size_t checkpoint_elems = size_t{1} << 24;
    SaConfig sa;  // path search settings for the tensor-network backend
};

struct TrainTrace {
    std::vector<double> nll;      // per epoch
    std::vector<double> rel_err;  // vs reference priors; NaN when absent
    std::vector<double> seconds;  // cumulative wall clock
    std::string to_csv() const;
};

// Adam moment vectors (unused but kept for SGD so checkpoints are uniform).
struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    int64_t step = 0;
};

struct TrainState {
    PriorParams params;
    OptimizerState opt;
    int epoch = 0;
};

struct TrainResult {
    PriorParams params;
    TrainTrace trace;
    int epochs_run = 0;
    bool converged = false;
};

// Mean of -log p over a batch; -inf inputs propagate to +inf loss.
double nll(std::span<const double> log_probs);

// Called after each epoch (for checkpointing / progress). Returning false
// stops training early.
using EpochCallback = std::function<bool(const TrainState &, double epoch_nll, double epoch_rel_err)>;

// Minibatch gradient descent on the NLL of recorded shots. Deterministic
// given cfg.seed; independent of thread count.
TrainResult train(
    const DetectorErrorModel &model,
    const ShotBatch &batch,
    const PriorParams &init,
    const TrainConfig &cfg,
    const std::vector<double> *reference_theta = nullptr,
    const EpochCallback &callback = {},
    const TrainState *resume = nullptr);

// Full-distribution training: the loss is sum_s p_data(s) * (-log p_theta(s))
// over all 2^m syndromes, with p_data computed exactly from theta_true.
// Requires m <= 20.
TrainResult exact_nll_train(
    const DetectorErrorModel &model,
    const std::vector<double> &theta_true,
    const PriorParams &init,
    const TrainConfig &cfg,
    const std::vector<double> *reference_theta = nullptr,
    const EpochCallback &callback = {},
    const TrainState *resume = nullptr);

// Multiplies each prior by a log-uniform factor in [1/scale, scale] and
// clamps back into (0,1). scale = 1 is the identity.
std::vector<double> perturb_priors(const std::vector<double> &theta, double scale, uint64_t seed);

// Mean over mechanisms of |theta - reference| / reference.
double mean_relative_error(std::span<const double> theta, std::span<const double> reference);

struct BroadcastReport {
    size_t matched = 0;
    size_t unmatched = 0;
    size_t collisions = 0;  // keys whose trained values disagreed (mean taken)
    std::vector<std::string> notes;
};

// Transfers trained priors to a model with a different round count by keying
// mechanisms on their round-relative detector coordinate offsets and logical
// flag. Mechanisms touching the first or last round map to the target's
// boundary rounds; bulk keys tile all interior rounds. Unmatched target
// mechanisms keep their current prior.
std::vector<double> broadcast_params(
    const DetectorErrorModel &source_model,
    const std::vector<double> &trained_theta,
    const DetectorErrorModel &target_model,
    BroadcastReport *report = nullptr);

// Binary checkpoint blob for resumable training.
std::string serialize_train_state(const TrainState &state);
TrainState deserialize_train_state(const std::string &blob);

}  // namespace demfit

#endif
