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

#include "demfit/mle.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "demfit/logspace.h"
#include "demfit/planar.h"
#include "demfit/rng.h"
#include "demfit/tn.h"

namespace demfit {

Backend parse_backend(std::string_view name) {
    if (name == "planar") {
        return Backend::kPlanar;
    }
    if (name == "tn" || name == "tensor-network") {
        return Backend::kTensorNetwork;
    }
    throw std::invalid_argument("unknown backend '" + std::string(name) + "' (expected planar or tn)");
}

PriorParams PriorParams::from_theta(const std::vector<double> &theta, Backend backend) {
    PriorParams params;
    params.backend = backend;
    params.phi.resize(theta.size());
    params.theta_values.resize(theta.size());
    for (size_t i = 0; i < theta.size(); i++) {
        double t = std::clamp(theta[i], kMinMechanismProb, kMaxMechanismProb);
        params.phi[i] = std::log(t / (1.0 - t));
        params.theta_values[i] = t;
    }
    return params;
}

std::vector<double> PriorParams::theta() const {
    if (theta_values.size() == phi.size()) {
        return theta_values;
    }
    std::vector<double> out(phi.size());
    for (size_t i = 0; i < phi.size(); i++) {
        out[i] = 1.0 / (1.0 + std::exp(-phi[i]));
    }
    return out;
}

double nll(std::span<const double> log_probs) {
    if (log_probs.empty()) {
        throw std::invalid_argument("nll of an empty batch");
    }
    double acc = 0.0;
    for (double lp : log_probs) {
        if (lp == kNegInf) {
            return std::numeric_limits<double>::infinity();
        }
        acc -= lp;
    }
    return acc / static_cast<double>(log_probs.size());
}

std::string TrainTrace::to_csv() const {
    std::ostringstream out;
    out << "epoch,nll,rel_err,seconds\n";
    for (size_t e = 0; e < nll.size(); e++) {
        out << e + 1 << "," << std::setprecision(17) << nll[e] << ",";
        if (e < rel_err.size() && std::isfinite(rel_err[e])) {
            out << std::setprecision(17) << rel_err[e];
        }
        out << "," << std::setprecision(6) << (e < seconds.size() ? seconds[e] : 0.0) << "\n";
    }
    return out.str();
}

double mean_relative_error(std::span<const double> theta, std::span<const double> reference) {
    if (theta.size() != reference.size() || theta.empty()) {
        throw std::invalid_argument("mean_relative_error: size mismatch");
    }
    double acc = 0.0;
    for (size_t i = 0; i < theta.size(); i++) {
        acc += std::abs(theta[i] - reference[i]) / reference[i];
    }
    return acc / static_cast<double>(theta.size());
}

std::vector<double> perturb_priors(const std::vector<double> &theta, double scale, uint64_t seed) {
    if (scale < 1.0) {
        throw std::invalid_argument("perturbation scale must be >= 1");
    }
    auto rng = make_rng(derive_seed(seed, 0x9e37));
    std::vector<double> out(theta.size());
    double span = std::log(scale);
    for (size_t i = 0; i < theta.size(); i++) {
        double factor = std::exp(uniform_double(rng, -span, span));
        out[i] = std::clamp(theta[i] * factor, kMinMechanismProb, kMaxMechanismProb);
    }
    return out;
}

// ---- Likelihood evaluation over weighted syndrome sets ------------------------

namespace {

struct WeightedBatch {
    std::vector<BitVec> syndromes;
    std::vector<double> weights;  // sum to 1
};

class Evaluator {
  public:
    virtual ~Evaluator() = default;
    // NLL = -sum w log p; grad = d NLL / d theta.
    virtual double eval(
        const std::vector<double> &theta, const WeightedBatch &batch, std::vector<double> *grad) = 0;
};

class PlanarEvaluator : public Evaluator {
  public:
    PlanarEvaluator(const DetectorErrorModel &model, int threads)
        : solver_(model), threads_(std::max(1, threads)) {
    }

    double eval(
        const std::vector<double> &theta, const WeightedBatch &batch, std::vector<double> *grad) override {
        size_t count = batch.syndromes.size();
        size_t n = theta.size();
        // Fixed chunk grid so results do not depend on the thread count.
        size_t chunk = 16;
        size_t n_chunks = (count + chunk - 1) / chunk;
        std::vector<double> chunk_nll(n_chunks, 0.0);
        std::vector<std::vector<double>> chunk_grad;
        if (grad) {
            chunk_grad.assign(n_chunks, std::vector<double>(n, 0.0));
        }
        std::atomic<size_t> next{0};
        auto worker = [&]() {
            std::vector<double> g;
            while (true) {
                size_t c = next.fetch_add(1);
                if (c >= n_chunks) {
                    return;
                }
                size_t begin = c * chunk;
                size_t end = std::min(count, begin + chunk);
                for (size_t q = begin; q < end; q++) {
                    double w = batch.weights[q];
                    double lp;
                    if (grad) {
                        lp = solver_.log_prob_with_grad(theta, batch.syndromes[q], &g);
                        for (size_t i = 0; i < n; i++) {
                            chunk_grad[c][i] -= w * g[i];
                        }
                    } else {
                        lp = solver_.log_prob(theta, batch.syndromes[q]);
                    }
                    chunk_nll[c] -= w * lp;
                }
            }
        };
        if (threads_ == 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (int t = 0; t < threads_; t++) {
                pool.emplace_back(worker);
            }
            for (auto &th : pool) {
                th.join();
            }
        }
        double loss = 0.0;
        if (grad) {
            grad->assign(n, 0.0);
        }
        for (size_t c = 0; c < n_chunks; c++) {
            loss += chunk_nll[c];
            if (grad) {
                for (size_t i = 0; i < n; i++) {
                    (*grad)[i] += chunk_grad[c][i];
                }
            }
        }
        return loss;
    }

  private:
    PlanarSolver solver_;
    int threads_;
};

class TnEvaluator : public Evaluator {
  public:
    TnEvaluator(const DetectorErrorModel &model, const TrainConfig &cfg)
        : network_(build_likelihood_network(model, model.priors())),
          checkpoint_elems_(cfg.checkpoint_elems) {
        SaConfig sa = cfg.sa;
        sa.seed = derive_seed(cfg.seed, 0x7a33);
        tree_ = optimize_path(network_, sa);
    }

    double eval(
        const std::vector<double> &theta, const WeightedBatch &batch, std::vector<double> *grad) override {
        Contractor contractor(network_, tree_, checkpoint_elems_);
        auto out = contractor.forward(theta, bind_syndromes(network_, batch.syndromes));
        double loss = 0.0;
        for (size_t q = 0; q < batch.syndromes.size(); q++) {
            if (out.sign[q] <= 0) {
                loss = std::numeric_limits<double>::infinity();
                break;
            }
            loss -= batch.weights[q] * out.log_abs[q];
        }
        if (grad) {
            if (!std::isfinite(loss)) {
                throw std::runtime_error("likelihood is zero or negative for an observed syndrome");
            }
            *grad = contractor.backward(batch.weights);
            for (double &g : *grad) {
                g = -g;
            }
        }
        return loss;
    }

  private:
    TensorNetwork network_;
    ContractionTree tree_;
    size_t checkpoint_elems_;
};

std::unique_ptr<Evaluator> make_evaluator(
    const DetectorErrorModel &model, Backend backend, const TrainConfig &cfg) {
    if (backend == Backend::kPlanar) {
        return std::make_unique<PlanarEvaluator>(model, cfg.threads);
    }
    return std::make_unique<TnEvaluator>(model, cfg);
}

// Shared optimization loop over an epoch-indexed weighted batch provider.
TrainResult train_core(
    const DetectorErrorModel &model,
    const std::function<WeightedBatch(int epoch)> &batch_for_epoch,
    const PriorParams &init,
    const TrainConfig &cfg,
    const std::vector<double> *reference_theta,
    const EpochCallback &callback,
    const TrainState *resume) {
    size_t n = model.n_mechanisms();
    if (init.phi.size() != n) {
        throw std::invalid_argument("initial priors do not match mechanism count");
    }
    TrainState state;
    if (resume) {
        state = *resume;
        if (state.params.phi.size() != n) {
            throw std::invalid_argument("resume state does not match mechanism count");
        }
    } else {
        state.params = init;
        state.opt.m.assign(n, 0.0);
        state.opt.v.assign(n, 0.0);
        state.opt.step = 0;
        state.epoch = 0;
    }
    auto evaluator = make_evaluator(model, init.backend, cfg);

    TrainResult result;
    result.params = state.params;
    auto t_start = std::chrono::steady_clock::now();
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kAdamEps = 1e-8;

    std::vector<double> grad_theta(n);
    std::vector<double> history;
    bool converged = false;
    int epoch = state.epoch;
    for (; epoch < cfg.epochs && !converged; epoch++) {
        WeightedBatch batch = batch_for_epoch(epoch);
        std::vector<double> theta = state.params.theta();
        double loss;
        try {
            loss = evaluator->eval(theta, batch, &grad_theta);
        } catch (const std::exception &err) {
            throw std::runtime_error(
                "backend failure at epoch " + std::to_string(epoch + 1) + ": " + err.what());
        }

        // Chain rule into logit space and take a descent step. Probabilities
        // are only recomputed for logits that actually moved, so a zero step
        // is an exact no-op.
        state.opt.step++;
        if (state.params.theta_values.size() != n) {
            state.params.theta_values = theta;
        }
        for (size_t i = 0; i < n; i++) {
            double g = grad_theta[i] * theta[i] * (1.0 - theta[i]);
            double step;
            if (cfg.optimizer == OptimizerKind::kAdam) {
                state.opt.m[i] = kBeta1 * state.opt.m[i] + (1 - kBeta1) * g;
                state.opt.v[i] = kBeta2 * state.opt.v[i] + (1 - kBeta2) * g * g;
                double mh = state.opt.m[i] / (1 - std::pow(kBeta1, static_cast<double>(state.opt.step)));
                double vh = state.opt.v[i] / (1 - std::pow(kBeta2, static_cast<double>(state.opt.step)));
                step = cfg.learning_rate * mh / (std::sqrt(vh) + kAdamEps);
            } else {
                step = cfg.learning_rate * g;
            }
            double next = state.params.phi[i] - step;
            if (next != state.params.phi[i]) {
                state.params.phi[i] = next;
                state.params.theta_values[i] = 1.0 / (1.0 + std::exp(-next));
            }
        }
        state.epoch = epoch + 1;

        double rel = std::numeric_limits<double>::quiet_NaN();
        if (reference_theta) {
            auto th = state.params.theta();
            rel = mean_relative_error(th, *reference_theta);
        }
        result.trace.nll.push_back(loss);
        result.trace.rel_err.push_back(rel);
        result.trace.seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count());

        history.push_back(loss);
        int w = cfg.convergence_window;
        if (w > 0 && static_cast<int>(history.size()) >= 2 * w) {
            double recent = 0.0, prev = 0.0;
            for (int q = 0; q < w; q++) {
                recent += history[history.size() - 1 - q];
                prev += history[history.size() - 1 - w - q];
            }
            recent /= w;
            prev /= w;
            if (std::abs(prev - recent) < cfg.convergence_rel_tol * std::abs(prev)) {
                converged = true;
            }
        }
        if (callback && !callback(state, loss, rel)) {
            break;
        }
    }
    result.params = state.params;
    result.epochs_run = epoch;
    result.converged = converged;
    return result;
}

}  // namespace

TrainResult train(
    const DetectorErrorModel &model,
    const ShotBatch &batch,
    const PriorParams &init,
    const TrainConfig &cfg,
    const std::vector<double> *reference_theta,
    const EpochCallback &callback,
    const TrainState *resume) {
    if (batch.n_shots == 0) {
        throw std::invalid_argument("cannot train on an empty shot batch");
    }
    size_t batch_size = std::min(cfg.batch_size, batch.n_shots);
    // One shuffle defines the epoch windows; epochs cycle through it.
    std::vector<uint32_t> order(batch.n_shots);
    for (size_t s = 0; s < order.size(); s++) {
        order[s] = static_cast<uint32_t>(s);
    }
    auto rng = make_rng(derive_seed(cfg.seed, 0x5afe));
    for (size_t s = order.size(); s > 1; s--) {
        size_t j = uniform_index(rng, s);
        std::swap(order[s - 1], order[j]);
    }

    auto provider = [&, order = std::move(order), batch_size](int epoch) {
        WeightedBatch out;
        std::unordered_map<BitVec, uint32_t, BitVecHash> counts;
        size_t start = (static_cast<size_t>(epoch) * batch_size) % batch.n_shots;
        for (size_t q = 0; q < batch_size; q++) {
            size_t shot = order[(start + q) % batch.n_shots];
            counts[batch.row(shot)]++;
        }
        out.syndromes.reserve(counts.size());
        out.weights.reserve(counts.size());
        // Deterministic order: sort by syndrome bits.
        std::vector<std::pair<BitVec, uint32_t>> items(counts.begin(), counts.end());
        std::sort(items.begin(), items.end(), [](const auto &a, const auto &b) {
            return a.first.words < b.first.words;
        });
        for (auto &[syndrome, count] : items) {
            out.syndromes.push_back(syndrome);
            out.weights.push_back(static_cast<double>(count) / static_cast<double>(batch_size));
        }
        return out;
    };
    return train_core(model, provider, init, cfg, reference_theta, callback, resume);
}

TrainResult exact_nll_train(
    const DetectorErrorModel &model,
    const std::vector<double> &theta_true,
    const PriorParams &init,
    const TrainConfig &cfg,
    const std::vector<double> *reference_theta,
    const EpochCallback &callback,
    const TrainState *resume) {
    size_t m = model.n_detectors;
    if (m > 20) {
        throw std::invalid_argument(
            "exact NLL training enumerates all syndromes; m = " + std::to_string(m) + " > 20");
    }
    // p_data over all 2^m syndromes from the true priors, computed with the
    // same exact backend that training uses.
    WeightedBatch all;
    for (uint64_t key = 0; key < (uint64_t{1} << m); key++) {
        BitVec s(m);
        for (size_t d = 0; d < m; d++) {
            s.set(d, (key >> d) & 1);
        }
        all.syndromes.push_back(std::move(s));
    }
    all.weights.resize(all.syndromes.size());
    if (init.backend == Backend::kPlanar) {
        PlanarSolver planar(model);
        for (size_t q = 0; q < all.syndromes.size(); q++) {
            all.weights[q] = std::exp(planar.log_prob(theta_true, all.syndromes[q]));
        }
    } else {
        TensorNetwork net = build_likelihood_network(model, theta_true);
        SaConfig sa = cfg.sa;
        sa.seed = derive_seed(cfg.seed, 0xda7a);
        auto tree = optimize_path(net, sa);
        Contractor contractor(net, tree, cfg.checkpoint_elems);
        auto out = contractor.forward(theta_true, bind_syndromes(net, all.syndromes));
        for (size_t q = 0; q < all.syndromes.size(); q++) {
            all.weights[q] = out.sign[q] * std::exp(out.log_abs[q]);
        }
    }
    // Drop syndromes of measure zero so the loss stays finite.
    WeightedBatch support;
    for (size_t q = 0; q < all.syndromes.size(); q++) {
        if (all.weights[q] > 0.0) {
            support.syndromes.push_back(all.syndromes[q]);
            support.weights.push_back(all.weights[q]);
        }
    }
    auto provider = [support](int) {
        return support;
    };
    return train_core(model, provider, init, cfg, reference_theta, callback, resume);
}

// ---- Parameter broadcasting ---------------------------------------------------

namespace {

struct BroadcastKey {
    // Detector signatures as (space coords..., round offset), sorted.
    std::vector<std::vector<double>> offsets;
    bool logical;
    bool touches_first;
    bool touches_last;

    bool operator<(const BroadcastKey &other) const {
        return std::tie(offsets, logical, touches_first, touches_last) <
               std::tie(other.offsets, other.logical, other.touches_first, other.touches_last);
    }
};

BroadcastKey key_for(
    const DetectorErrorModel &model, const ErrorMechanism &mech, double r_lo, double r_hi) {
    BroadcastKey key;
    key.logical = mech.flips_logical;
    double base = std::numeric_limits<double>::infinity();
    double top = -std::numeric_limits<double>::infinity();
    for (uint32_t d : mech.detectors) {
        double round = model.detector_round(d);
        base = std::min(base, round);
        top = std::max(top, round);
    }
    if (mech.detectors.empty()) {
        key.touches_first = key.touches_last = false;
        return key;
    }
    key.touches_first = base == r_lo;
    key.touches_last = top == r_hi;
    for (uint32_t d : mech.detectors) {
        const auto &coords = model.detector_coords[d];
        std::vector<double> sig(coords.begin(), coords.end());
        sig.back() -= base;
        key.offsets.push_back(std::move(sig));
    }
    std::sort(key.offsets.begin(), key.offsets.end());
    return key;
}

void round_range(const DetectorErrorModel &model, double *lo, double *hi) {
    if (model.detector_coords.size() != model.n_detectors || model.n_detectors == 0) {
        throw std::runtime_error("broadcast requires detector coordinates with a round axis");
    }
    *lo = std::numeric_limits<double>::infinity();
    *hi = -std::numeric_limits<double>::infinity();
    for (size_t d = 0; d < model.n_detectors; d++) {
        double round = model.detector_round(d);
        *lo = std::min(*lo, round);
        *hi = std::max(*hi, round);
    }
}

}  // namespace

std::vector<double> broadcast_params(
    const DetectorErrorModel &source_model,
    const std::vector<double> &trained_theta,
    const DetectorErrorModel &target_model,
    BroadcastReport *report) {
    if (trained_theta.size() != source_model.n_mechanisms()) {
        throw std::invalid_argument("trained prior vector does not match source model");
    }
    double src_lo, src_hi, tgt_lo, tgt_hi;
    round_range(source_model, &src_lo, &src_hi);
    round_range(target_model, &tgt_lo, &tgt_hi);
    if (src_hi - src_lo < 2) {
        throw std::runtime_error("source model needs at least 3 distinct rounds to define a bulk cycle");
    }

    std::map<BroadcastKey, std::vector<double>> table;
    for (size_t i = 0; i < source_model.n_mechanisms(); i++) {
        auto key = key_for(source_model, source_model.mechanisms[i], src_lo, src_hi);
        table[key].push_back(trained_theta[i]);
    }
    BroadcastReport local;
    std::map<BroadcastKey, double> value;
    for (auto &[key, values] : table) {
        double mean = 0.0;
        double lo = values[0], hi = values[0];
        for (double v : values) {
            mean += v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        mean /= static_cast<double>(values.size());
        value[key] = mean;
        if (values.size() > 1 && hi - lo > 1e-12 * std::max(1e-30, std::abs(mean))) {
            local.collisions++;
        }
    }

    std::vector<double> out = target_model.priors();
    for (size_t i = 0; i < target_model.n_mechanisms(); i++) {
        auto key = key_for(target_model, target_model.mechanisms[i], tgt_lo, tgt_hi);
        auto it = value.find(key);
        if (it == value.end() && (key.touches_first || key.touches_last)) {
            // A mechanism can touch a boundary round in a short target yet be
            // bulk in the source (or vice versa); retry with relaxed tags.
            BroadcastKey relaxed = key;
            relaxed.touches_first = false;
            relaxed.touches_last = false;
            it = value.find(relaxed);
        }
        if (it == value.end()) {
            local.unmatched++;
            local.notes.push_back("target mechanism " + std::to_string(i) + " has no source key");
            continue;
        }
        out[i] = it->second;
        local.matched++;
    }
    if (report) {
        *report = std::move(local);
    }
    return out;
}

// ---- Checkpoints ---------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'F', 'C', 'P'};
constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::string *out, const T &value) {
    out->append(reinterpret_cast<const char *>(&value), sizeof value);
}

template <typename T>
T take(const std::string &in, size_t *pos) {
    if (*pos + sizeof(T) > in.size()) {
        throw std::runtime_error("truncated checkpoint");
    }
    T value;
    std::memcpy(&value, in.data() + *pos, sizeof value);
    *pos += sizeof value;
    return value;
}

void put_vec(std::string *out, const std::vector<double> &v) {
    put<uint64_t>(out, v.size());
    out->append(reinterpret_cast<const char *>(v.data()), v.size() * sizeof(double));
}

std::vector<double> take_vec(const std::string &in, size_t *pos) {
    uint64_t n = take<uint64_t>(in, pos);
    if (*pos + n * sizeof(double) > in.size()) {
        throw std::runtime_error("truncated checkpoint");
    }
    std::vector<double> v(n);
    std::memcpy(v.data(), in.data() + *pos, n * sizeof(double));
    *pos += n * sizeof(double);
    return v;
}

}  // namespace

std::string serialize_train_state(const TrainState &state) {
    std::string out;
    out.append(kCheckpointMagic, 4);
    put(&out, kCheckpointVersion);
    put<uint8_t>(&out, state.params.backend == Backend::kPlanar ? 0 : 1);
    put<int64_t>(&out, state.epoch);
    put<int64_t>(&out, state.opt.step);
    put_vec(&out, state.params.phi);
    put_vec(&out, state.params.theta_values);
    put_vec(&out, state.opt.m);
    put_vec(&out, state.opt.v);
    return out;
}

TrainState deserialize_train_state(const std::string &blob) {
    if (blob.size() < 8 || std::memcmp(blob.data(), kCheckpointMagic, 4) != 0) {
        throw std::runtime_error("not a training checkpoint");
    }
    size_t pos = 4;
    uint32_t version = take<uint32_t>(blob, &pos);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    TrainState state;
    state.params.backend = take<uint8_t>(blob, &pos) == 0 ? Backend::kPlanar : Backend::kTensorNetwork;
    state.epoch = static_cast<int>(take<int64_t>(blob, &pos));
    state.opt.step = take<int64_t>(blob, &pos);
    state.params.phi = take_vec(blob, &pos);
    state.params.theta_values = take_vec(blob, &pos);
    state.opt.m = take_vec(blob, &pos);
    state.opt.v = take_vec(blob, &pos);
    return state;
}

}  // namespace demfit
