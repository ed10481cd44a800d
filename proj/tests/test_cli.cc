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

// End-to-end tests driving the installed CLI binary (path passed as argv[1]).

#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

std::string g_cli;
std::filesystem::path g_dir;

struct RunResult {
    int exit_code;
    std::string stdout_text;
};

RunResult run(const std::string &args) {
    std::string out_file = (g_dir / "cmd_stdout.txt").string();
    std::string cmd = g_cli + " " + args + " > " + out_file + " 2> " + (g_dir / "cmd_stderr.txt").string();
    int rc = std::system(cmd.c_str());
    std::ifstream in(out_file, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return {WEXITSTATUS(rc), ss.str()};
}

std::string slurp(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string path_of(const char *name) {
    return (g_dir / name).string();
}

// Strips the wall-clock column from a trace CSV.
std::string strip_seconds(const std::string &csv) {
    std::istringstream in(csv);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) {
        size_t last = line.rfind(',');
        out << line.substr(0, last) << "\n";
    }
    return out.str();
}

}  // namespace

TEST_CASE("gen + sample + estimate + decode + eval round trip") {
    auto gen = run("gen --code repetition --distance 3 --rounds 2 --error-rate 0.02 --out " + path_of("m.dem"));
    REQUIRE(gen.exit_code == 0);
    CHECK(gen.stdout_text.find("\"n_detectors\":6") != std::string::npos);

    auto sample = run("sample --dem " + path_of("m.dem") + " --shots 4000 --seed 3 --out " +
                      path_of("m.01") + " --labels " + path_of("m.lab"));
    REQUIRE(sample.exit_code == 0);

    auto est = run("estimate --dem " + path_of("m.dem") + " --dets " + path_of("m.01") +
                   " --backend planar --epochs 4 --batch-size 1000 --lr 0.01 --seed 5 --out " +
                   path_of("m_trained.dem") + " --trace " + path_of("m_trace.csv"));
    REQUIRE(est.exit_code == 0);
    CHECK(est.stdout_text.find("\"epochs_run\":4") != std::string::npos);
    CHECK(std::filesystem::exists(path_of("m_trained.dem")));
    // Trace has header + 4 epochs.
    auto trace = slurp(path_of("m_trace.csv"));
    CHECK(std::count(trace.begin(), trace.end(), '\n') == 5);

    auto dec = run("decode --dem " + path_of("m.dem") + " --dets " + path_of("m.01") +
                   " --backend planar --out " + path_of("m_pred.01"));
    REQUIRE(dec.exit_code == 0);

    auto eval = run("eval --dem " + path_of("m.dem") + " --dets " + path_of("m.01") + " --labels " +
                    path_of("m.lab") + " --backend planar");
    REQUIRE(eval.exit_code == 0);
    CHECK(eval.stdout_text.find("\"ler\":") != std::string::npos);
    CHECK(eval.stdout_text.find("\"wilson95\":") != std::string::npos);
}

TEST_CASE("estimate with lr=0 leaves priors byte-identical") {
    run("gen --code repetition --distance 3 --rounds 1 --error-rate 0.01 --out " + path_of("z.dem"));
    run("sample --dem " + path_of("z.dem") + " --shots 500 --seed 1 --out " + path_of("z.01"));
    auto est = run("estimate --dem " + path_of("z.dem") + " --dets " + path_of("z.01") +
                   " --backend planar --epochs 3 --batch-size 100 --lr 0 --seed 2 --out " +
                   path_of("z_out.dem"));
    REQUIRE(est.exit_code == 0);
    CHECK(slurp(path_of("z.dem")) == slurp(path_of("z_out.dem")));
}

TEST_CASE("every command is byte-identical across reruns with the same seed") {
    auto rerun_identical = [&](const std::string &args, const char *artifact) {
        auto first = run(args);
        REQUIRE(first.exit_code == 0);
        std::string snapshot = slurp(path_of(artifact));
        auto second = run(args);
        CHECK(first.stdout_text == second.stdout_text);
        CHECK(snapshot == slurp(path_of(artifact)));
    };
    rerun_identical(
        "gen --code surface --distance 3 --rounds 1 --error-rate 0.003 --out " + path_of("s.dem"),
        "s.dem");
    rerun_identical(
        "sample --dem " + path_of("s.dem") + " --shots 2000 --seed 9 --format b8 --out " +
            path_of("s.b8") + " --labels " + path_of("s.lab"),
        "s.b8");
    rerun_identical(
        "estimate --dem " + path_of("s.dem") + " --dets " + path_of("s.b8") +
            " --format b8 --backend tn --epochs 3 --batch-size 500 --lr 0.02 "
            "--seed 4 --threads 1 --sa-proposals 200 --out " +
            path_of("s_t.dem"),
        "s_t.dem");
    rerun_identical(
        "pathfind --dem " + path_of("s.dem") + " --seed 11 --sa-proposals 500 --out " +
            path_of("s_tree.json"),
        "s_tree.json");
    rerun_identical(
        "decode --dem " + path_of("s.dem") + " --dets " + path_of("s.b8") +
            " --format b8 --backend tn --seed 13 --out " + path_of("s_pred.01"),
        "s_pred.01");
}

TEST_CASE("estimate resumes from a checkpoint and reproduces the trace") {
    run("gen --code repetition --distance 3 --rounds 2 --error-rate 0.03 --out " + path_of("r.dem"));
    run("sample --dem " + path_of("r.dem") + " --shots 3000 --seed 8 --out " + path_of("r.01"));

    std::string base = "estimate --dem " + path_of("r.dem") + " --dets " + path_of("r.01") +
                       " --backend planar --batch-size 500 --lr 0.02 --seed 21 ";
    auto full = run(base + "--epochs 8 --trace " + path_of("r_full.csv") + " --out " + path_of("r_full.dem"));
    REQUIRE(full.exit_code == 0);

    auto head = run(base + "--epochs 4 --trace " + path_of("r_part.csv") + " --checkpoint " +
                    path_of("r.ckpt") + " --out " + path_of("r_head.dem"));
    REQUIRE(head.exit_code == 0);
    auto tail = run(base + "--epochs 8 --trace " + path_of("r_part.csv") + " --checkpoint " +
                    path_of("r.ckpt") + " --resume --out " + path_of("r_tail.dem"));
    REQUIRE(tail.exit_code == 0);

    CHECK(strip_seconds(slurp(path_of("r_full.csv"))) == strip_seconds(slurp(path_of("r_part.csv"))));
    CHECK(slurp(path_of("r_full.dem")) == slurp(path_of("r_tail.dem")));
}

TEST_CASE("training config comes from a JSON file, flags win") {
    run("gen --code repetition --distance 3 --rounds 1 --error-rate 0.02 --out " + path_of("c.dem"));
    run("sample --dem " + path_of("c.dem") + " --shots 400 --seed 1 --out " + path_of("c.01"));
    {
        std::ofstream cfg(path_of("c.json"));
        cfg << "{\"epochs\": 2, \"batch_size\": 100, \"learning_rate\": 0.0, \"seed\": 7}";
    }
    auto est = run("estimate --dem " + path_of("c.dem") + " --dets " + path_of("c.01") +
                   " --backend planar --config " + path_of("c.json") + " --out " + path_of("c_o.dem"));
    REQUIRE(est.exit_code == 0);
    CHECK(est.stdout_text.find("\"epochs_run\":2") != std::string::npos);
    CHECK(slurp(path_of("c.dem")) == slurp(path_of("c_o.dem")));  // lr 0 from config
}

TEST_CASE("errors exit nonzero with a message") {
    auto missing = run("sample --dem /nonexistent.dem --shots 10 --out " + path_of("x.01"));
    CHECK(missing.exit_code != 0);
    auto bad = run("gen --code repetition --distance 4 --rounds 1 --out " + path_of("x.dem"));
    CHECK(bad.exit_code != 0);
}

TEST_CASE("verify command reports per-suite counts") {
    auto res = run("verify --suite contract --seed 2");
    REQUIRE(res.exit_code == 0);
    CHECK(res.stdout_text.find("\"contract\"") != std::string::npos);
    CHECK(res.stdout_text.find("\"total_failed\":0") != std::string::npos);
}

int main(int argc, char **argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-demfit-binary>\n");
        return 2;
    }
    g_cli = argv[1];
    g_dir = std::filesystem::temp_directory_path() / "demfit_cli_test";
    std::filesystem::create_directories(g_dir);
    doctest::Context context;
    context.applyCommandLine(argc - 1, argv + 1);
    int rc = context.run();
    std::filesystem::remove_all(g_dir);
    return rc;
}
