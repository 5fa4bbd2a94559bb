// Copyright (c) 2026 the wsolkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "wsol/hash.hpp"
#include "wsol/pipeline.hpp"
#include "test_util.hpp"

using namespace wsol;
using wsol_test::TempDir;
namespace fs = std::filesystem;

namespace {

/// Small but trainable configuration for fast end-to-end pipeline tests.
PipelineConfig tiny_pipeline(const std::string& workdir, uint64_t seed = 21) {
    PipelineConfig c;
    c.seed = seed;
    c.workdir = workdir;
    c.data.synthetic.num_images = 12;
    c.data.synthetic.width = 48;
    c.data.synthetic.height = 48;
    c.data.synthetic.object_min_size = 16;
    c.data.synthetic.object_max_size = 24;
    c.data.grid.min_size = 15;
    c.data.grid.max_size_frac = 0.56;
    c.data.grid.jitter_count = 10;
    c.classifier.input_size = 32;
    c.classifier.conv1_channels = 6;
    c.classifier.conv2_channels = 8;
    c.classifier.iterations = 60;
    c.classifier.batch_size = 8;
    c.classifier.learning_rate = 0.05;
    c.classifier.momentum = 0.95;
    c.mining.top_m = 12;
    c.mil.t_outer = 4;
    c.mil.t_inner = 8;
    c.detector.iterations = 150;
    return c;
}

std::vector<std::string> artifact_names() {
    return {"dataset/manifest.json", "proposals.csv", "classifier.wscm", "mined.csv",
            "selected.csv",          "refined.csv",   "detector.wsdm",   "detections.csv",
            "eval.json",             "report.json"};
}

void run_chain(const PipelineConfig& c) {
    for (const char* stage :
         {"gen-data", "train-cls", "mine", "mil", "refine", "train-det", "detect", "eval", "report"})
        run_stage(stage, c);
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("config parsing: defaults carry the standard values") {
    PipelineConfig c = pipeline_config_from_json_text("{}");
    CHECK(c.mining.top_m == 50);
    CHECK(c.mining.alpha == doctest::Approx(5.0));
    CHECK(c.mining.contrast_weight == doctest::Approx(10.0));
    CHECK(c.mining.activation_weight == doctest::Approx(1.0));
    CHECK(c.mining.strategy == MaskOutStrategy::InOut);
    CHECK(c.eval.mining_overlap == doctest::Approx(0.5));
    CHECK(c.eval.iou_threshold == doctest::Approx(0.5));
    CHECK(c.detector.score_threshold == doctest::Approx(0.8));
    CHECK(c.detector.nms_iou == doctest::Approx(0.5));
    CHECK(c.classifier.input_size == 64);
}

TEST_CASE("config parsing: overrides, unknown keys, strategy names") {
    PipelineConfig c = pipeline_config_from_json_text(
        R"({"seed": 3, "mining": {"top_m": 9, "strategy": "whole-out"}, "eval": {"ap_interpolation": "11-point"}})");
    CHECK(c.seed == 3);
    CHECK(c.mining.top_m == 9);
    CHECK(c.mining.strategy == MaskOutStrategy::WholeOut);
    CHECK(c.eval.ap_interpolation == ApInterpolation::ElevenPoint);

    CHECK_THROWS_AS(pipeline_config_from_json_text(R"({"minign": {}})"), ConfigError);
    CHECK_THROWS_AS(pipeline_config_from_json_text(R"({"mining": {"topm": 3}})"), ConfigError);
    CHECK_THROWS_AS(pipeline_config_from_json_text(R"({"mining": {"strategy": "out"}})"), ConfigError);
    CHECK_THROWS_AS(pipeline_config_from_json_text("{nope"), ConfigError);
}

TEST_CASE("config hash covers semantics but not workdir/threads") {
    PipelineConfig a = tiny_pipeline("/tmp/a");
    PipelineConfig b = tiny_pipeline("/tmp/b");
    b.threads = 8;
    CHECK(a.config_hash() == b.config_hash());
    b.mining.top_m += 1;
    CHECK(a.config_hash() != b.config_hash());
    PipelineConfig c = tiny_pipeline("/tmp/a", 22);
    CHECK(a.config_hash() != c.config_hash());
}

TEST_CASE("full chain: artifacts, determinism across workdirs, stage isolation") {
    TempDir dir1("pipe1"), dir2("pipe2");
    PipelineConfig c1 = tiny_pipeline(dir1.str());
    PipelineConfig c2 = tiny_pipeline(dir2.str());

    run_chain(c1);
    run_chain(c2);

    for (const auto& name : artifact_names()) {
        CAPTURE(name);
        REQUIRE(fs::exists(artifact_path(c1, name)));
        CHECK(hash_file_hex(artifact_path(c1, name)) == hash_file_hex(artifact_path(c2, name)));
    }

    SUBCASE("re-running one stage reproduces its artifact byte-identically") {
        std::string mined = artifact_path(c1, "mined.csv");
        std::string before = hash_file_hex(mined);
        fs::remove(mined);
        run_stage("mine", c1);
        CHECK(hash_file_hex(mined) == before);

        std::string refined = artifact_path(c1, "refined.csv");
        std::string refined_before = hash_file_hex(refined);
        fs::remove(refined);
        run_stage("refine", c1);
        CHECK(hash_file_hex(refined) == refined_before);
    }

    SUBCASE("a different seed changes the artifacts") {
        TempDir dir3("pipe3");
        PipelineConfig c3 = tiny_pipeline(dir3.str(), 5151);
        run_stage("gen-data", c3);
        CHECK(hash_file_hex(artifact_path(c3, "proposals.csv")) !=
              hash_file_hex(artifact_path(c1, "proposals.csv")));
    }

    SUBCASE("threads do not change mining output") {
        PipelineConfig threaded = c1;
        threaded.threads = 3;
        std::string mined = artifact_path(c1, "mined.csv");
        std::string before = hash_file_hex(mined);
        fs::remove(mined);
        run_stage("mine", threaded);
        CHECK(hash_file_hex(mined) == before);
    }
}

TEST_CASE("missing upstream artifacts raise actionable errors") {
    TempDir dir("pipe_missing");
    PipelineConfig c = tiny_pipeline(dir.str());

    try {
        run_stage("mine", c);
        FAIL("expected MissingArtifactError");
    } catch (const MissingArtifactError& e) {
        CHECK(std::string(e.what()).find("gen-data") != std::string::npos);
    }

    run_stage("gen-data", c);
    try {
        run_stage("mine", c);
        FAIL("expected MissingArtifactError");
    } catch (const MissingArtifactError& e) {
        CHECK(std::string(e.what()).find("classifier") != std::string::npos);
        CHECK(std::string(e.what()).find("train-cls") != std::string::npos);
    }

    // eval names the missing detections file
    run_stage("train-cls", c);
    run_stage("mine", c);
    run_stage("mil", c);
    run_stage("refine", c);
    try {
        run_stage("eval", c);
        FAIL("expected MissingArtifactError");
    } catch (const MissingArtifactError& e) {
        CHECK(std::string(e.what()).find("detections") != std::string::npos);
        CHECK(std::string(e.what()).find("detect") != std::string::npos);
    }
}

TEST_CASE("config-hash chain check refuses mismatched configs unless forced") {
    TempDir dir("pipe_chain");
    PipelineConfig c = tiny_pipeline(dir.str());
    run_stage("gen-data", c);
    run_stage("train-cls", c);

    PipelineConfig changed = c;
    changed.mining.alpha = 2.5;  // semantic change invalidates upstream artifacts
    CHECK_THROWS_AS(run_stage("mine", changed), ConfigError);

    StageOptions force;
    force.force = true;
    run_stage("mine", changed, force);
    CHECK(fs::exists(artifact_path(c, "mined.csv")));
}

TEST_CASE("ablation toggles: contrast-only fusion and stage passthroughs") {
    TempDir dir("pipe_ablate");
    PipelineConfig c = tiny_pipeline(dir.str());
    c.mining.activation_weight = 0.0;  // --no-as
    c.mil.enabled = false;             // --no-mil
    c.refine.enabled = false;          // --no-seg
    run_stage("gen-data", c);
    run_stage("train-cls", c);
    run_stage("mine", c);
    run_stage("mil", c);
    run_stage("refine", c);

    // passthrough: refined equals selected byte for byte
    CHECK(hash_file_hex(artifact_path(c, "selected.csv")) == hash_file_hex(artifact_path(c, "refined.csv")));

    auto rows = ablation_rows(c);
    REQUIRE(!rows.empty());
    for (const auto& row : rows) {
        CHECK(row.cs);
        CHECK_FALSE(row.as);
        CHECK_FALSE(row.ft);
    }
}

TEST_CASE("wsolkit CLI: exit codes 0/2/3 and seed/env overrides") {
    TempDir dir("cli");
    PipelineConfig c = tiny_pipeline(dir.str("run"));
    save_pipeline_config(dir.str("config.json"), c);
    std::string bin = WSOLKIT_BIN;

    auto run = [&](const std::string& args) {
        int status = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
        return WEXITSTATUS(status);
    };

    CHECK(run("gen-data --config " + dir.str("config.json")) == 0);
    CHECK(run("mine --config " + dir.str("config.json")) == 3);       // classifier missing
    CHECK(run("gen-data --config " + dir.str("nonexistent.json")) == 2);

    wsol_test::spit(dir.str("bad.json"), "{\"mining\": {\"bogus_key\": 1}}");
    CHECK(run("gen-data --config " + dir.str("bad.json")) == 2);

    // WSOLKIT_SEED overrides the config seed: artifacts must differ
    std::string before = hash_file_hex(dir.str("run/proposals.csv"));
    int status = std::system(
        ("WSOLKIT_SEED=909 " + bin + " gen-data --config " + dir.str("config.json") + " >/dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(status) == 0);
    CHECK(hash_file_hex(dir.str("run/proposals.csv")) != before);
}

}  // TEST_SUITE
