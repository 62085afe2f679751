#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "msse/run_manifest.hpp"
#include "test_util.hpp"

#ifndef MSSE_CLI_PATH
#error "MSSE_CLI_PATH must point at the msse executable"
#endif

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    const std::string tag =
        "/tmp/msse_cli_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++);
    const std::string cmd =
        std::string("\"") + MSSE_CLI_PATH + "\" " + args + " >" + tag + ".out 2>" + tag + ".err";
    const int status = std::system(cmd.c_str());
    RunResult r;
    if (WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
    r.out = testutil::read_file_bytes(tag + ".out");
    r.err = testutil::read_file_bytes(tag + ".err");
    std::remove((tag + ".out").c_str());
    std::remove((tag + ".err").c_str());
    return r;
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    nlohmann::json j;
    in >> j;
    return j;
}

std::string tiny_config(const std::string& path, int epochs, int folds) {
    nlohmann::json cfg{
        {"model",
         {{"tff_filters_per_path", 3}, {"se_ratio", 3}, {"n_tab", 1}, {"tab_filters", 4}}},
        {"train", {{"epochs", epochs}, {"batch_size", 4}, {"folds", folds}}}};
    testutil::write_file(path, cfg.dump(2) + "\n");
    return path;
}

// A small corpus shared by the heavier cases; built once per process.
const std::string& shared_corpus() {
    static testutil::TempDir dir("msse_cli_corpus");
    static std::string path;
    if (path.empty()) {
        auto r = run_cli("synth --seed 3 --out " + dir.str() +
                         " --classes 2 --clips 5 --duration 0.3");
        REQUIRE(r.exit_code == 0);
        path = dir.str();
    }
    return path;
}

bool same_bytes(const std::string& a, const std::string& b) {
    return testutil::read_file_bytes(a) == testutil::read_file_bytes(b);
}

}  // namespace

TEST_CASE("usage errors exit with 2, runtime errors with 1") {
    testutil::TempDir tmp("msse_cli_exit");
    CHECK(run_cli("").exit_code == 2);                        // missing subcommand
    CHECK(run_cli("--out " + tmp.str()).exit_code == 2);      // still no subcommand
    CHECK(run_cli("frobnicate --out " + tmp.str()).exit_code == 2);
    CHECK(run_cli("synth --bogus-flag --out " + tmp.str()).exit_code == 2);
    CHECK(run_cli("synth").exit_code == 2);  // --out is required
    CHECK(run_cli("--help").exit_code == 0);
    CHECK(run_cli("synth --help").exit_code == 0);

    // config-level mistakes are usage errors too
    auto bad_classes = run_cli("synth --classes 0 --out " + tmp.file("a"));
    CHECK(bad_classes.exit_code == 2);
    CHECK(bad_classes.err.find("--help") != std::string::npos);
    CHECK(run_cli("train --out " + tmp.file("b")).exit_code == 2);  // no manifest anywhere
    CHECK(run_cli("train --manifest " + shared_corpus() + "/manifest.csv --mode sideways --out " +
                  tmp.file("c"))
              .exit_code == 2);

    // a missing input file is a runtime failure, not a usage error
    CHECK(run_cli("train --manifest /nonexistent/m.csv --mode holdout --out " + tmp.file("d"))
              .exit_code == 1);
    CHECK(run_cli("--config /nonexistent/cfg.json synth --out " + tmp.file("e")).exit_code == 1);
}

TEST_CASE("synth is deterministic per seed and records a run manifest") {
    testutil::TempDir tmp("msse_cli_synth");
    const std::string a = tmp.file("a"), b = tmp.file("b"), c = tmp.file("c");
    auto ra = run_cli("synth --seed 9 --classes 2 --clips 2 --duration 0.2 --out " + a);
    auto rb = run_cli("synth --seed 9 --classes 2 --clips 2 --duration 0.2 --out " + b);
    auto rc = run_cli("synth --seed 10 --classes 2 --clips 2 --duration 0.2 --out " + c);
    REQUIRE(ra.exit_code == 0);
    REQUIRE(rb.exit_code == 0);
    REQUIRE(rc.exit_code == 0);
    CHECK(ra.out.find(a + "/manifest.csv") != std::string::npos);

    CHECK(same_bytes(a + "/manifest.csv", b + "/manifest.csv"));
    CHECK(same_bytes(a + "/class_00/000.wav", b + "/class_00/000.wav"));
    CHECK(same_bytes(a + "/class_01/001.wav", b + "/class_01/001.wav"));
    CHECK_FALSE(same_bytes(a + "/class_00/000.wav", c + "/class_00/000.wav"));

    auto manifest = read_json(a + "/run_manifest.json");
    CHECK(msse::cli::is_run_manifest(manifest));
    auto rm = msse::cli::RunManifest::from_json(manifest);
    CHECK(rm.command == "synth");
    CHECK(rm.seed == 9);
    CHECK(!rm.outputs.empty());
    for (const auto& rel : rm.outputs) {
        CHECK(std::filesystem::exists(a + "/" + rel));
    }
}

TEST_CASE("extract builds a loadable feature cache") {
    testutil::TempDir tmp("msse_cli_extract");
    const std::string cache = tmp.file("cache");
    auto r = run_cli("extract --manifest " + shared_corpus() + "/manifest.csv --out " + cache);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find(cache + "/index.json") != std::string::npos);

    auto index = read_json(cache + "/index.json");
    CHECK(index.at("fingerprint").is_string());
    CHECK(index.at("entries").size() == 10);
    for (const auto& e : index.at("entries")) {
        CHECK(std::filesystem::exists(cache + "/" + e.at("record").get<std::string>()));
    }
}

TEST_CASE("train holdout writes a report, a checkpoint, and a replayable manifest") {
    testutil::TempDir tmp("msse_cli_train");
    const std::string cfg = tiny_config(tmp.file("cfg.json"), 2, 2);
    const std::string run1 = tmp.file("run1");
    auto r1 = run_cli("--config " + cfg + " --seed 4 train --manifest " + shared_corpus() +
                      "/manifest.csv --mode holdout --out " + run1);
    REQUIRE(r1.exit_code == 0);
    CHECK(std::filesystem::exists(run1 + "/model.ckpt"));

    auto report = read_json(run1 + "/report.json");
    long long total = 0;
    for (const auto& row : report.at("confusion")) {
        for (const auto& v : row) total += v.get<long long>();
    }
    CHECK(total == 2);  // 20 % of 10 clips
    CHECK(report.at("per_fold").size() == 1);

    // replaying from the run manifest reproduces every artifact bit-for-bit
    const std::string run2 = tmp.file("run2");
    auto r2 = run_cli("train --config " + run1 + "/run_manifest.json --out " + run2);
    REQUIRE(r2.exit_code == 0);
    auto rm = msse::cli::RunManifest::from_json(read_json(run1 + "/run_manifest.json"));
    REQUIRE(!rm.outputs.empty());
    for (const auto& rel : rm.outputs) {
        CAPTURE(rel);
        CHECK(same_bytes(run1 + "/" + rel, run2 + "/" + rel));
    }
}

TEST_CASE("train cv writes one checkpoint per fold") {
    testutil::TempDir tmp("msse_cli_cv");
    const std::string cfg = tiny_config(tmp.file("cfg.json"), 1, 2);
    const std::string run = tmp.file("run");
    auto r = run_cli("--config " + cfg + " train --manifest " + shared_corpus() +
                     "/manifest.csv --mode cv --out " + run);
    REQUIRE(r.exit_code == 0);
    CHECK(std::filesystem::exists(run + "/fold_00.ckpt"));
    CHECK(std::filesystem::exists(run + "/fold_01.ckpt"));
    auto report = read_json(run + "/report.json");
    CHECK(report.at("per_fold").size() == 2);

    // every utterance is evaluated exactly once across the folds
    long long total = 0;
    for (const auto& row : report.at("confusion")) {
        for (const auto& v : row) total += v.get<long long>();
    }
    CHECK(total == 10);
}

TEST_CASE("ablate emits the five-variant csv") {
    testutil::TempDir tmp("msse_cli_ablate");
    const std::string cfg = tiny_config(tmp.file("cfg.json"), 1, 2);
    const std::string run = tmp.file("run");
    auto r = run_cli("--config " + cfg + " ablate --manifest " + shared_corpus() +
                     "/manifest.csv --out " + run);
    REQUIRE(r.exit_code == 0);

    std::ifstream in(run + "/ablation.csv");
    REQUIRE(in.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 1 + 5 * 3);  // header + 5 variants x (2 folds + aggregate)
    CHECK(lines[0] == "variant,uar,war,fold");
    const std::vector<std::string> order{"full", "tim", "wo_sd", "wo_pc", "wo_se"};
    for (int v = 0; v < 5; ++v) {
        for (int f = 0; f < 3; ++f) {
            CHECK(lines[1 + v * 3 + f].rfind(order[v] + ",", 0) == 0);
        }
        CHECK(lines[1 + v * 3 + 2].substr(lines[1 + v * 3 + 2].size() - 4) == ",all");
    }

    auto report = read_json(run + "/ablation_report.json");
    for (const auto& name : order) CHECK(report.contains(name));
}

TEST_CASE("export-embeddings reads a trained checkpoint") {
    testutil::TempDir tmp("msse_cli_export");
    const std::string cfg = tiny_config(tmp.file("cfg.json"), 1, 2);
    const std::string trained = tmp.file("trained");
    REQUIRE(run_cli("--config " + cfg + " train --manifest " + shared_corpus() +
                    "/manifest.csv --mode holdout --out " + trained)
                .exit_code == 0);

    const std::string out = tmp.file("emb");
    auto r = run_cli("export-embeddings --checkpoint " + trained + "/model.ckpt --manifest " +
                     shared_corpus() + "/manifest.csv --out " + out);
    REQUIRE(r.exit_code == 0);
    std::ifstream in(out + "/embeddings.csv");
    REQUIRE(in.good());
    int lines = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++lines;
        CHECK(std::count(line.begin(), line.end(), ',') == 1 + 4);  // id,label,tab_filters
    }
    CHECK(lines == 10);

    // a corrupt checkpoint is a runtime failure
    testutil::write_file(tmp.file("junk.ckpt"), "not a checkpoint");
    CHECK(run_cli("export-embeddings --checkpoint " + tmp.file("junk.ckpt") + " --manifest " +
                  shared_corpus() + "/manifest.csv --out " + tmp.file("emb2"))
              .exit_code == 1);
}
