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

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "demfit/codegen.h"
#include "demfit/contract.h"
#include "demfit/decode.h"
#include "demfit/dem.h"
#include "demfit/logspace.h"
#include "demfit/mle.h"
#include "demfit/oracle.h"
#include "demfit/planar.h"
#include "demfit/rng.h"
#include "demfit/tn.h"

using json = nlohmann::ordered_json;
using namespace demfit;

namespace {

void emit(const json &summary) {
    std::cout << summary.dump() << "\n";
}

std::string read_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open file: " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string &path, const std::string &contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write file: " + path);
    }
    out << contents;
}

struct CommonFlags {
    std::string dem_path;
    std::string format = "01";
    uint64_t seed = 0;
    int threads = 0;  // 0 = hardware concurrency
    std::string backend = "planar";

    int resolved_threads() const {
        if (threads > 0) {
            return threads;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }
};

void add_common(CLI::App *cmd, CommonFlags *flags, bool with_backend = true) {
    cmd->add_option("--dem", flags->dem_path, "Detector error model file")->required();
    cmd->add_option("--format", flags->format, "Shot file format: 01 or b8")
        ->check(CLI::IsMember({"01", "b8"}));
    cmd->add_option("--seed", flags->seed, "Random seed");
    cmd->add_option("--threads", flags->threads, "Worker threads (0 = auto)");
    if (with_backend) {
        cmd->add_option("--backend", flags->backend, "Likelihood backend")
            ->check(CLI::IsMember({"planar", "tn"}));
    }
}

json model_summary(const DetectorErrorModel &model) {
    json j;
    j["n_detectors"] = model.n_detectors;
    j["n_mechanisms"] = model.n_mechanisms();
    j["graphlike"] = model.is_graphlike();
    for (const auto &[key, value] : model.metadata) {
        j["metadata"][key] = value;
    }
    return j;
}

// ---- estimate helpers -------------------------------------------------------

struct EstimateOptions {
    CommonFlags common;
    std::string dets_path;
    std::string out_path;
    std::string trace_path;
    std::string checkpoint_path;
    bool resume = false;
    std::string config_path;
    std::string exact_from_dem;
    std::string reference_dem;
    int epochs = 500;
    size_t batch_size = 10000;
    double learning_rate = 1e-3;
    std::string optimizer = "adam";
    int convergence_window = 20;
    double convergence_rel_tol = 1e-4;
    int sa_proposals = 10000;
    double sa_decay = 0.96;
    double sa_floor = 1e-3;
    int sa_chains = 1;
    double time_budget = 0.0;
};

// Fills options from the JSON config file; values given explicitly on the
// command line win.
void apply_config_file(EstimateOptions *opt, const CLI::App *cmd) {
    if (opt->config_path.empty()) {
        return;
    }
    json cfg = json::parse(read_file(opt->config_path));
    auto flag_absent = [&](const char *name) {
        return cmd->count(name) == 0;
    };
    if (cfg.contains("epochs") && flag_absent("--epochs")) {
        opt->epochs = cfg["epochs"].get<int>();
    }
    if (cfg.contains("batch_size") && flag_absent("--batch-size")) {
        opt->batch_size = cfg["batch_size"].get<size_t>();
    }
    if (cfg.contains("learning_rate") && flag_absent("--lr")) {
        opt->learning_rate = cfg["learning_rate"].get<double>();
    }
    if (cfg.contains("optimizer") && flag_absent("--optimizer")) {
        opt->optimizer = cfg["optimizer"].get<std::string>();
    }
    if (cfg.contains("seed") && flag_absent("--seed")) {
        opt->common.seed = cfg["seed"].get<uint64_t>();
    }
    if (cfg.contains("convergence_window")) {
        opt->convergence_window = cfg["convergence_window"].get<int>();
    }
    if (cfg.contains("convergence_rel_tol")) {
        opt->convergence_rel_tol = cfg["convergence_rel_tol"].get<double>();
    }
}

TrainConfig make_train_config(const EstimateOptions &opt) {
    TrainConfig cfg;
    cfg.epochs = opt.epochs;
    cfg.batch_size = opt.batch_size;
    cfg.learning_rate = opt.learning_rate;
    cfg.optimizer = opt.optimizer == "sgd" ? OptimizerKind::kSgd : OptimizerKind::kAdam;
    cfg.seed = opt.common.seed;
    cfg.convergence_window = opt.convergence_window;
    cfg.convergence_rel_tol = opt.convergence_rel_tol;
    cfg.threads = opt.common.resolved_threads();
    cfg.sa.proposals_per_temp = opt.sa_proposals;
    cfg.sa.decay = opt.sa_decay;
    cfg.sa.t_floor = opt.sa_floor;
    cfg.sa.chains = opt.sa_chains;
    cfg.sa.time_budget_seconds = opt.time_budget;
    return cfg;
}

int run_estimate(const EstimateOptions &opt) {
    auto model = parse_dem_file(opt.common.dem_path);
    Backend backend = parse_backend(opt.common.backend);
    TrainConfig cfg = make_train_config(opt);

    PriorParams init = PriorParams::from_theta(model.priors(), backend);
    TrainState resume_state;
    const TrainState *resume_ptr = nullptr;
    if (opt.resume) {
        if (opt.checkpoint_path.empty()) {
            throw std::runtime_error("--resume needs --checkpoint");
        }
        resume_state = deserialize_train_state(read_file(opt.checkpoint_path));
        resume_state.params.backend = backend;
        resume_ptr = &resume_state;
    }

    std::vector<double> reference;
    const std::vector<double> *reference_ptr = nullptr;
    if (!opt.reference_dem.empty()) {
        reference = parse_dem_file(opt.reference_dem).priors();
        reference_ptr = &reference;
    }

    std::ofstream trace_out;
    if (!opt.trace_path.empty()) {
        bool append = opt.resume && std::filesystem::exists(opt.trace_path);
        trace_out.open(opt.trace_path, append ? std::ios::app : std::ios::out);
        if (!trace_out) {
            throw std::runtime_error("cannot write trace file: " + opt.trace_path);
        }
        if (!append) {
            trace_out << "epoch,nll,rel_err,seconds\n";
        }
    }
    auto t_start = std::chrono::steady_clock::now();
    EpochCallback callback = [&](const TrainState &state, double epoch_nll, double rel) {
        if (trace_out.is_open()) {
            trace_out << state.epoch << "," << std::setprecision(17) << epoch_nll << ",";
            if (std::isfinite(rel)) {
                trace_out << std::setprecision(17) << rel;
            }
            trace_out << "," << std::setprecision(6)
                      << std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count()
                      << "\n";
            trace_out.flush();
        }
        if (!opt.checkpoint_path.empty()) {
            write_file(opt.checkpoint_path, serialize_train_state(state));
        }
        return true;
    };

    TrainResult result;
    if (!opt.exact_from_dem.empty()) {
        auto truth = parse_dem_file(opt.exact_from_dem);
        if (truth.n_mechanisms() != model.n_mechanisms()) {
            throw std::runtime_error("--exact-from-dem model shape does not match --dem");
        }
        result = exact_nll_train(model, truth.priors(), init, cfg, reference_ptr, callback, resume_ptr);
    } else {
        if (opt.dets_path.empty()) {
            throw std::runtime_error("estimate needs --dets (or --exact-from-dem)");
        }
        auto shots = read_shots(opt.dets_path, parse_shot_format(opt.common.format), model.n_detectors);
        result = train(model, shots, init, cfg, reference_ptr, callback, resume_ptr);
    }

    auto trained = model;
    trained.set_priors(result.params.theta());
    if (!opt.out_path.empty()) {
        write_dem_file(trained, opt.out_path);
    }
    json summary;
    summary["command"] = "estimate";
    summary["backend"] = opt.common.backend;
    summary["epochs_run"] = result.epochs_run;
    summary["converged"] = result.converged;
    if (!result.trace.nll.empty()) {
        summary["initial_nll"] = result.trace.nll.front();
        summary["final_nll"] = result.trace.nll.back();
        if (std::isfinite(result.trace.rel_err.back())) {
            summary["final_rel_err"] = result.trace.rel_err.back();
        }
    }
    summary["out"] = opt.out_path;
    emit(summary);
    return 0;
}

// ---- verify suites ----------------------------------------------------------

DetectorErrorModel testing_random_dem(uint64_t seed);

struct SuiteResult {
    int passed = 0;
    int failed = 0;
    void check(bool ok) {
        (ok ? passed : failed)++;
    }
};

SuiteResult verify_dem(uint64_t seed) {
    SuiteResult r;
    for (uint64_t k = 0; k < 40; k++) {
        auto model = testing_random_dem(derive_seed(seed, k));
        auto text = serialize_dem(model);
        auto back = parse_dem(text);
        r.check(serialize_dem(back) == text);
    }
    // Sampler multinomial consistency at m <= 12.
    auto model = generate_repetition_dem(3, 2, 0.02);
    auto theta = model.priors();
    auto probs = oracle::char_sum_all_probs(model, theta);
    size_t n_shots = 500000;
    auto batch = sample_shots(model, n_shots, derive_seed(seed, 999));
    std::vector<size_t> counts(probs.size(), 0);
    for (size_t s = 0; s < batch.n_shots; s++) {
        uint64_t key = 0;
        for (size_t d = 0; d < model.n_detectors; d++) {
            key |= static_cast<uint64_t>(batch.get(s, d)) << d;
        }
        counts[key]++;
    }
    for (size_t key = 0; key < probs.size(); key++) {
        if (probs[key] <= 1e-4) {
            continue;
        }
        double expect = probs[key] * static_cast<double>(n_shots);
        double sigma = std::sqrt(probs[key] * (1 - probs[key]) * static_cast<double>(n_shots));
        r.check(std::abs(static_cast<double>(counts[key]) - expect) <= 5 * sigma);
    }
    // Pure errors reproduce syndromes.
    PureErrorSolver solver(model);
    auto rng = make_rng(derive_seed(seed, 7));
    for (int trial = 0; trial < 200; trial++) {
        ErrorConfig e(model.n_mechanisms());
        for (size_t i = 0; i < e.n; i++) {
            e.set(i, bernoulli(rng, 0.1));
        }
        BitVec s = syndrome_of(model, e).syndrome;
        r.check(syndrome_of(model, solver.solve(s)).syndrome == s);
    }
    return r;
}

DetectorErrorModel testing_random_dem(uint64_t seed) {
    auto rng = make_rng(seed);
    DetectorErrorModel model;
    model.n_detectors = 4 + uniform_index(rng, 5);
    size_t n = 4 + uniform_index(rng, 12);
    for (size_t i = 0; i < n; i++) {
        ErrorMechanism mech;
        mech.prob = uniform_double(rng, 0.01, 0.4);
        size_t w = 1 + uniform_index(rng, 3);
        for (size_t q = 0; q < w; q++) {
            mech.detectors.push_back(static_cast<uint32_t>(uniform_index(rng, model.n_detectors)));
        }
        mech.flips_logical = bernoulli(rng, 0.3);
        model.mechanisms.push_back(std::move(mech));
    }
    model.canonicalize();
    return model;
}

DualSpinGraph random_planar_graph_cli(uint64_t seed, size_t w, size_t h) {
    auto rng = make_rng(seed);
    DualSpinGraph g;
    for (size_t y = 0; y < h; y++) {
        for (size_t x = 0; x < w; x++) {
            g.vertices.push_back({static_cast<double>(x), static_cast<double>(y)});
        }
    }
    auto vid = [&](size_t x, size_t y) {
        return static_cast<uint32_t>(y * w + x);
    };
    auto maybe = [&](uint32_t u, uint32_t v) {
        if (uniform_double(rng) < 0.75) {
            g.edges.push_back({u, v, static_cast<uint32_t>(g.edges.size()),
                               uniform_double(rng, -2.0, 2.0)});
        }
    };
    for (size_t y = 0; y < h; y++) {
        for (size_t x = 0; x < w; x++) {
            if (x + 1 < w) {
                maybe(vid(x, y), vid(x + 1, y));
            }
            if (y + 1 < h) {
                maybe(vid(x, y), vid(x, y + 1));
            }
            if (x + 1 < w && y + 1 < h) {
                if (uniform_double(rng) < 0.5) {
                    maybe(vid(x, y), vid(x + 1, y + 1));
                } else {
                    maybe(vid(x + 1, y), vid(x, y + 1));
                }
            }
        }
    }
    return g;
}

SuiteResult verify_planar(uint64_t seed) {
    SuiteResult r;
    for (uint64_t k = 0; k < 40; k++) {
        auto g = random_planar_graph_cli(derive_seed(seed, k), 2 + k % 3, 2 + (k / 3) % 3);
        double brute = oracle::brute_partition(g);
        double kw = kac_ward_log_partition(g).log_z;
        r.check(std::abs(kw - brute) <= 1e-10 * std::max(1.0, std::abs(brute)));
    }
    auto model = generate_repetition_dem(3, 2, 0.02);
    auto theta = model.priors();
    PlanarSolver solver(model);
    auto rng = make_rng(derive_seed(seed, 5));
    for (int trial = 0; trial < 30; trial++) {
        ErrorConfig e(model.n_mechanisms());
        for (size_t i = 0; i < e.n; i++) {
            e.set(i, bernoulli(rng, 0.2));
        }
        BitVec s = syndrome_of(model, e).syndrome;
        double lp = solver.log_prob(theta, s);
        double expect = std::log(oracle::char_sum_prob(model, theta, s));
        r.check(std::abs(lp - expect) <= 1e-9 * std::max(1.0, std::abs(expect)));
        auto coset = solver.coset_log_z(theta, s);
        double total = log_add(coset.log_z_plus, coset.log_z_minus);
        r.check(std::abs(total - coset.log_z_free) <= 1e-9 * std::max(1.0, std::abs(coset.log_z_free)));
    }
    return r;
}

SuiteResult verify_tn(uint64_t seed) {
    SuiteResult r;
    for (uint64_t k = 0; k < 10; k++) {
        auto model = testing_random_dem(derive_seed(seed, 100 + k));
        auto theta = model.priors();
        auto net = build_likelihood_network(model, theta);
        SaConfig sa;
        sa.seed = derive_seed(seed, k);
        sa.proposals_per_temp = 200;
        sa.t_floor = 0.05;
        auto tree = optimize_path(net, sa);
        Contractor contractor(net, tree);
        auto rng = make_rng(derive_seed(seed, 200 + k));
        std::vector<BitVec> syndromes;
        for (int q = 0; q < 10; q++) {
            BitVec s(model.n_detectors);
            for (size_t d = 0; d < model.n_detectors; d++) {
                s.set(d, bernoulli(rng, 0.5));
            }
            syndromes.push_back(std::move(s));
        }
        auto out = contractor.forward(theta, bind_syndromes(net, syndromes));
        for (size_t q = 0; q < syndromes.size(); q++) {
            double expect = oracle::brute_prob(model, theta, syndromes[q]);
            if (expect == 0.0) {
                r.check(out.sign[q] == 0);
            } else {
                r.check(std::abs(out.log_abs[q] - std::log(expect)) <= 1e-9 * std::max(1.0, std::abs(std::log(expect))));
            }
        }
    }
    return r;
}

SuiteResult verify_contract(uint64_t seed) {
    SuiteResult r;
    auto model = testing_random_dem(derive_seed(seed, 42));
    auto theta = model.priors();
    auto net = build_likelihood_network(model, theta);
    SaConfig sa1;
    sa1.seed = derive_seed(seed, 1);
    sa1.proposals_per_temp = 200;
    sa1.t_floor = 0.05;
    SaConfig sa2 = sa1;
    sa2.seed = derive_seed(seed, 2);
    auto tree1 = optimize_path(net, sa1);
    auto tree1b = optimize_path(net, sa1);
    auto tree2 = optimize_path(net, sa2);
    r.check(tree1.to_json(0) == tree1b.to_json(0));
    Contractor c1(net, tree1);
    Contractor c2(net, tree2);
    auto rng = make_rng(derive_seed(seed, 3));
    std::vector<BitVec> syndromes;
    for (int q = 0; q < 8; q++) {
        BitVec s(model.n_detectors);
        for (size_t d = 0; d < model.n_detectors; d++) {
            s.set(d, bernoulli(rng, 0.5));
        }
        syndromes.push_back(std::move(s));
    }
    auto o1 = c1.forward(theta, bind_syndromes(net, syndromes));
    auto o2 = c2.forward(theta, bind_syndromes(net, syndromes));
    for (size_t q = 0; q < syndromes.size(); q++) {
        bool same = o1.sign[q] == o2.sign[q] &&
                    (o1.sign[q] == 0 || std::abs(o1.log_abs[q] - o2.log_abs[q]) <=
                                            1e-9 * std::max(1.0, std::abs(o1.log_abs[q])));
        r.check(same);
    }
    auto report = estimate_cost(net, tree1, syndromes.size());
    r.check(static_cast<double>(c1.flops_executed()) <= 2.0 * report.total_flops);
    r.check(report.total_flops <= 2.0 * static_cast<double>(c1.flops_executed()));
    return r;
}

SuiteResult verify_grad(uint64_t seed) {
    SuiteResult r;
    // Planar gradients.
    auto model = generate_repetition_dem(3, 2, 0.05);
    auto theta = model.priors();
    PlanarSolver solver(model);
    auto rng = make_rng(derive_seed(seed, 9));
    for (int trial = 0; trial < 5; trial++) {
        ErrorConfig e(model.n_mechanisms());
        for (size_t i = 0; i < e.n; i++) {
            e.set(i, bernoulli(rng, 0.25));
        }
        BitVec s = syndrome_of(model, e).syndrome;
        std::vector<double> grad;
        solver.log_prob_with_grad(theta, s, &grad);
        auto fd = oracle::fd_grad(
            [&](std::span<const double> t) {
                return solver.log_prob(std::vector<double>(t.begin(), t.end()), s);
            },
            theta);
        for (size_t i = 0; i < grad.size(); i++) {
            r.check(std::abs(grad[i] - fd[i]) <= 1e-5 * std::max(1.0, std::abs(fd[i])));
        }
    }
    // TN gradients.
    auto hyper = testing_random_dem(derive_seed(seed, 10));
    auto h_theta = hyper.priors();
    auto net = build_likelihood_network(hyper, h_theta);
    SaConfig sa;
    sa.seed = derive_seed(seed, 11);
    sa.proposals_per_temp = 150;
    sa.t_floor = 0.05;
    auto tree = optimize_path(net, sa);
    std::vector<BitVec> syndromes;
    for (int q = 0; q < 4; q++) {
        ErrorConfig e(hyper.n_mechanisms());
        for (size_t i = 0; i < e.n; i++) {
            e.set(i, bernoulli(rng, 0.3));
        }
        syndromes.push_back(syndrome_of(hyper, e).syndrome);
    }
    std::vector<double> weights(syndromes.size(), 1.0);
    Contractor contractor(net, tree);
    contractor.forward(h_theta, bind_syndromes(net, syndromes));
    auto grad = contractor.backward(weights);
    auto fd = oracle::fd_grad(
        [&](std::span<const double> t) {
            Contractor c(net, tree);
            auto out = c.forward(std::vector<double>(t.begin(), t.end()), bind_syndromes(net, syndromes));
            double acc = 0;
            for (double lp : out.log_abs) {
                acc += lp;
            }
            return acc;
        },
        h_theta);
    for (size_t i = 0; i < grad.size(); i++) {
        r.check(std::abs(grad[i] - fd[i]) <= 2e-5 * std::max(1.0, std::abs(fd[i])));
    }
    return r;
}

SuiteResult verify_decode(uint64_t seed) {
    SuiteResult r;
    auto model = generate_repetition_dem(3, 1, 0.07);
    auto theta = model.priors();
    (void)seed;
    ShotBatch batch;
    batch.n_detectors = model.n_detectors;
    for (uint32_t key = 0; key < (1u << model.n_detectors); key++) {
        BitVec s(model.n_detectors);
        for (size_t d = 0; d < model.n_detectors; d++) {
            s.set(d, (key >> d) & 1);
        }
        batch.append(s);
    }
    auto planar = decode_planar(model, theta, batch);
    auto tn = decode_tn(model, theta, batch);
    for (size_t q = 0; q < batch.n_shots; q++) {
        auto brute = oracle::brute_ml_decode(model, theta, batch.row(q));
        if (std::abs(brute.p0 - brute.p1) <= 1e-12 * (brute.p0 + brute.p1)) {
            continue;
        }
        r.check(planar.predicted.get(q) == (brute.prediction == 1));
        r.check(tn.predicted.get(q) == (brute.prediction == 1));
    }
    return r;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Detector error model prior estimation and exact maximum-likelihood decoding"};
    app.require_subcommand(1);

    // ---- gen ----
    auto *gen = app.add_subcommand("gen", "Generate a memory-experiment detector error model");
    std::string gen_code = "repetition";
    int gen_d = 3, gen_r = 1;
    double gen_eps = 0.001;
    std::string gen_out;
    gen->add_option("--code", gen_code, "Code family")->check(CLI::IsMember({"repetition", "surface"}));
    gen->add_option("--distance", gen_d, "Code distance (odd, >= 3)")->required();
    gen->add_option("--rounds", gen_r, "Measurement rounds (>= 1)")->required();
    gen->add_option("--error-rate", gen_eps, "Uniform depolarizing rate");
    gen->add_option("--out", gen_out, "Output DEM file")->required();

    // ---- sample ----
    auto *sample = app.add_subcommand("sample", "Sample detection events from a model");
    CommonFlags sample_flags;
    size_t sample_shots_n = 1000;
    std::string sample_out, sample_labels;
    add_common(sample, &sample_flags, false);
    sample->add_option("--shots", sample_shots_n, "Number of shots")->required();
    sample->add_option("--out", sample_out, "Output detection-event file")->required();
    sample->add_option("--labels", sample_labels, "Optional output for logical flip labels");

    // ---- estimate ----
    auto *estimate = app.add_subcommand("estimate", "Fit priors by maximum likelihood");
    EstimateOptions est;
    add_common(estimate, &est.common);
    estimate->add_option("--dets", est.dets_path, "Recorded detection events");
    estimate->add_option("--out", est.out_path, "Trained DEM output");
    estimate->add_option("--trace", est.trace_path, "Per-epoch CSV trace");
    estimate->add_option("--checkpoint", est.checkpoint_path, "Checkpoint file (written per epoch)");
    estimate->add_flag("--resume", est.resume, "Resume from --checkpoint");
    estimate->add_option("--config", est.config_path, "JSON training config");
    estimate->add_option("--exact-from-dem", est.exact_from_dem,
                         "Train against the exact syndrome distribution of this model (m <= 20)");
    estimate->add_option("--reference-dem", est.reference_dem, "Reference priors for the rel_err trace");
    estimate->add_option("--epochs", est.epochs, "Epoch budget");
    estimate->add_option("--batch-size", est.batch_size, "Minibatch size");
    estimate->add_option("--lr", est.learning_rate, "Learning rate");
    estimate->add_option("--optimizer", est.optimizer, "Optimizer")->check(CLI::IsMember({"adam", "sgd"}));
    estimate->add_option("--sa-proposals", est.sa_proposals, "Path-search proposals per temperature");
    estimate->add_option("--sa-chains", est.sa_chains, "Independent path-search chains");

    // ---- decode ----
    auto *decode = app.add_subcommand("decode", "Exact maximum-likelihood decoding");
    CommonFlags dec_flags;
    std::string dec_dets, dec_out;
    int dec_sa_proposals = 2000;
    add_common(decode, &dec_flags);
    decode->add_option("--dets", dec_dets, "Recorded detection events")->required();
    decode->add_option("--out", dec_out, "Predictions output (01 format)");
    decode->add_option("--sa-proposals", dec_sa_proposals, "Path-search proposals per temperature");

    // ---- eval ----
    auto *eval = app.add_subcommand("eval", "Logical error rate against recorded labels");
    CommonFlags eval_flags;
    std::string eval_dets, eval_labels, eval_out;
    int eval_sa_proposals = 2000;
    add_common(eval, &eval_flags);
    eval->add_option("--dets", eval_dets, "Recorded detection events")->required();
    eval->add_option("--labels", eval_labels, "Recorded logical flips")->required();
    eval->add_option("--out", eval_out, "Report output (JSON)");
    eval->add_option("--sa-proposals", eval_sa_proposals, "Path-search proposals per temperature");

    // ---- pathfind ----
    auto *pathfind = app.add_subcommand("pathfind", "Search for a low-cost contraction tree");
    CommonFlags path_flags;
    std::string path_which = "likelihood";
    std::string path_out, path_network_out;
    size_t path_batch = 1;
    int path_proposals = 10000;
    double path_decay = 0.96;
    double path_floor = 1e-3;
    int path_chains = 1;
    double path_budget = 0.0;
    double path_mem_cap = static_cast<double>(uint64_t{1} << 30);
    add_common(pathfind, &path_flags, false);
    pathfind->add_option("--which", path_which, "Network kind")
        ->check(CLI::IsMember({"likelihood", "decoder"}));
    pathfind->add_option("--out", path_out, "Tree output (JSON)");
    pathfind->add_option("--network-json", path_network_out, "Dump the network structure as JSON");
    pathfind->add_option("--batch-size", path_batch, "Batch size used for costing");
    pathfind->add_option("--sa-proposals", path_proposals, "Proposals per temperature");
    pathfind->add_option("--sa-decay", path_decay, "Temperature decay factor");
    pathfind->add_option("--sa-floor", path_floor, "Temperature floor");
    pathfind->add_option("--sa-chains", path_chains, "Independent chains");
    pathfind->add_option("--time-budget", path_budget, "Per-chain time budget in seconds (0 = none)");
    pathfind->add_option("--mem-cap", path_mem_cap, "Intermediate tensor element cap");

    // ---- verify ----
    auto *verify = app.add_subcommand("verify", "Run oracle cross-check suites");
    std::string verify_suite = "all";
    uint64_t verify_seed = 0;
    verify->add_option("--suite", verify_suite, "Suite to run")
        ->check(CLI::IsMember({"dem", "planar", "tn", "contract", "grad", "decode", "all"}));
    verify->add_option("--seed", verify_seed, "Random seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            auto model = generate_dem(gen_code, gen_d, gen_r, gen_eps);
            write_dem_file(model, gen_out);
            json summary = model_summary(model);
            summary["command"] = "gen";
            summary["out"] = gen_out;
            emit(summary);
            return 0;
        }
        if (*sample) {
            auto model = parse_dem_file(sample_flags.dem_path);
            auto batch = sample_shots(model, sample_shots_n, sample_flags.seed,
                                      sample_flags.resolved_threads());
            auto format = parse_shot_format(sample_flags.format);
            write_shots(batch, sample_out, format);
            if (!sample_labels.empty()) {
                write_labels(*batch.logical_flips, sample_labels, format);
            }
            size_t fired = 0;
            for (size_t s = 0; s < batch.n_shots; s++) {
                for (size_t d = 0; d < batch.n_detectors; d++) {
                    fired += batch.get(s, d);
                }
            }
            json summary;
            summary["command"] = "sample";
            summary["shots"] = batch.n_shots;
            summary["n_detectors"] = batch.n_detectors;
            summary["mean_fired_per_shot"] =
                static_cast<double>(fired) / static_cast<double>(std::max<size_t>(1, batch.n_shots));
            summary["out"] = sample_out;
            emit(summary);
            return 0;
        }
        if (*estimate) {
            apply_config_file(&est, estimate);
            return run_estimate(est);
        }
        if (*decode) {
            auto model = parse_dem_file(dec_flags.dem_path);
            auto theta = model.priors();
            auto shots = read_shots(dec_dets, parse_shot_format(dec_flags.format), model.n_detectors);
            DecodeResult result;
            if (parse_backend(dec_flags.backend) == Backend::kPlanar) {
                result = decode_planar(model, theta, shots, dec_flags.resolved_threads());
            } else {
                SaConfig sa;
                sa.seed = dec_flags.seed;
                sa.proposals_per_temp = dec_sa_proposals;
                result = decode_tn(model, theta, shots, sa);
            }
            if (!dec_out.empty()) {
                write_labels(result.predicted, dec_out, ShotFormat::kText01);
            }
            size_t flips = result.predicted.popcount();
            json summary;
            summary["command"] = "decode";
            summary["backend"] = dec_flags.backend;
            summary["shots"] = shots.n_shots;
            summary["predicted_flips"] = flips;
            summary["ties"] = result.ties;
            summary["out"] = dec_out;
            emit(summary);
            return 0;
        }
        if (*eval) {
            auto model = parse_dem_file(eval_flags.dem_path);
            auto theta = model.priors();
            auto format = parse_shot_format(eval_flags.format);
            auto shots = read_shots(eval_dets, format, model.n_detectors);
            shots.logical_flips = read_labels(eval_labels, format);
            if (shots.logical_flips->n != shots.n_shots) {
                throw std::runtime_error("label count does not match shot count");
            }
            SaConfig sa;
            sa.seed = eval_flags.seed;
            sa.proposals_per_temp = eval_sa_proposals;
            auto report = evaluate_ler(model, theta, shots, parse_backend(eval_flags.backend), sa,
                                       eval_flags.resolved_threads());
            if (!eval_out.empty()) {
                write_file(eval_out, report.to_json() + "\n");
            }
            std::cout << report.to_json() << "\n";
            return 0;
        }
        if (*pathfind) {
            auto model = parse_dem_file(path_flags.dem_path);
            auto theta = model.priors();
            auto net = path_which == "decoder" ? build_decoder_network(model, theta)
                                               : build_likelihood_network(model, theta);
            if (!path_network_out.empty()) {
                write_file(path_network_out, net.to_json() + "\n");
            }
            SaConfig sa;
            sa.seed = path_flags.seed;
            sa.proposals_per_temp = path_proposals;
            sa.decay = path_decay;
            sa.t_floor = path_floor;
            sa.chains = path_chains;
            sa.batch_size = path_batch;
            sa.time_budget_seconds = path_budget;
            sa.weights.mem_cap_elems = path_mem_cap;
            auto tree = optimize_path(net, sa);
            CostWeights weights;
            weights.mem_cap_elems = path_mem_cap;
            auto report = estimate_cost(net, tree, path_batch, weights);
            if (!path_out.empty()) {
                write_file(path_out, tree.to_json(net.structure_hash()) + "\n");
            }
            json summary;
            summary["command"] = "pathfind";
            summary["which"] = path_which;
            summary["n_nodes"] = net.nodes.size();
            summary["n_indices"] = net.n_indices;
            summary["total_flops"] = report.total_flops;
            summary["max_tensor_elems"] = report.max_tensor_elems;
            summary["total_access_bytes"] = report.total_access_bytes;
            summary["loss"] = report.loss;
            summary["network_hash"] = net.structure_hash();
            summary["out"] = path_out;
            emit(summary);
            return 0;
        }
        if (*verify) {
            json summary;
            summary["command"] = "verify";
            int total_failed = 0;
            auto run_suite = [&](const std::string &name, SuiteResult (*fn)(uint64_t)) {
                if (verify_suite != "all" && verify_suite != name) {
                    return;
                }
                SuiteResult r = fn(verify_seed);
                summary[name]["passed"] = r.passed;
                summary[name]["failed"] = r.failed;
                total_failed += r.failed;
            };
            run_suite("dem", verify_dem);
            run_suite("planar", verify_planar);
            run_suite("tn", verify_tn);
            run_suite("contract", verify_contract);
            run_suite("grad", verify_grad);
            run_suite("decode", verify_decode);
            summary["total_failed"] = total_failed;
            emit(summary);
            return total_failed == 0 ? 0 : 1;
        }
    } catch (const std::exception &err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 0;
}
