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

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wsol/classifier.hpp"
#include "wsol/dataset.hpp"
#include "wsol/detector.hpp"
#include "wsol/eval.hpp"
#include "wsol/mil.hpp"
#include "wsol/mining.hpp"
#include "wsol/refine.hpp"

namespace wsol {

struct MilStageConfig {
    bool enabled = true;
    double lambda = 1e-3;
    int t_outer = 10;
    int t_inner = 20;
    double learning_rate = 0.1;
    double tau = 0.0;      // instance collection threshold
    int negative_cap = 400;
};

struct RefineStageConfig {
    bool enabled = true;
    double expand_frac = 0.25;
    int max_iterations = 20;
};

struct DetectorStageConfig {
    int iterations = 40000;
    int batch_size = 64;
    double learning_rate = 1.0;
    double lambda_reg = 1.0;
    double fg_fraction = 0.25;
    double score_threshold = 0.8;  // detection threshold
    double nms_iou = 0.5;
};

struct DataConfig {
    std::string manifest;       // external dataset; empty -> synthetic in workdir
    std::string test_manifest;  // optional separate split for detect/eval
    std::string proposals;      // external proposals CSV; empty -> grid generator
    std::string image_format = "png";
    SyntheticConfig synthetic;
    GridProposalConfig grid;
};

/// One config file drives every stage. Defaults carry the method's
/// standard values (M=50, alpha=5, fusion 10:1, overlap t=0.5, detection
/// threshold 0.8); everything is overridable.
struct PipelineConfig {
    uint64_t seed = 7;
    std::string workdir = "runs/default";
    int threads = 1;
    DataConfig data;
    ClassifierConfig classifier;
    MiningConfig mining;
    MilStageConfig mil;
    RefineStageConfig refine;
    DetectorStageConfig detector;
    EvalConfig eval;

    /// Canonical JSON (sorted keys, workdir/threads excluded) hashed into
    /// every stage manifest; chained stages refuse on mismatch.
    std::string canonical_json() const;
    std::string config_hash() const;
};

PipelineConfig load_pipeline_config(const std::string& path);
PipelineConfig pipeline_config_from_json_text(const std::string& text, const std::string& origin = "<inline>");
void save_pipeline_config(const std::string& path, const PipelineConfig& config);

struct StageOptions {
    bool force = false;  // skip config-hash chain checks
    bool quiet = false;  // suppress the report table on stdout
};

// Stage entry points. Each reads its upstream artifacts from the workdir
// (or the configured external paths), writes its artifact plus a
// <stage>.manifest.json, and is byte-deterministic given config+seed.
void stage_gen_data(const PipelineConfig& config, const StageOptions& opts = {});
void stage_train_cls(const PipelineConfig& config, const StageOptions& opts = {});
void stage_mine(const PipelineConfig& config, const StageOptions& opts = {});
void stage_mil(const PipelineConfig& config, const StageOptions& opts = {});
void stage_refine(const PipelineConfig& config, const StageOptions& opts = {});
void stage_train_det(const PipelineConfig& config, const StageOptions& opts = {});
void stage_detect(const PipelineConfig& config, const StageOptions& opts = {});
void stage_eval(const PipelineConfig& config, const StageOptions& opts = {});
void stage_report(const PipelineConfig& config, const StageOptions& opts = {});

/// Run a named stage (gen-data, train-cls, mine, mil, refine, train-det,
/// detect, eval, report).
void run_stage(const std::string& name, const PipelineConfig& config, const StageOptions& opts = {});

// Artifact locations inside the workdir.
std::string artifact_path(const PipelineConfig& config, const std::string& name);
Dataset pipeline_dataset(const PipelineConfig& config);       // training split
Dataset pipeline_eval_dataset(const PipelineConfig& config);  // test split if configured
ProposalSet pipeline_proposals(const PipelineConfig& config, const Dataset& dataset);

/// Best localization per positive image per class from an artifact, for
/// CorLoc. Sources: "mined" (top-1 fused), "mined-contrast" (top-1 by
/// contrast), "selected", "refined", "detections".
std::map<int, std::map<std::string, Box>> localizations_from_artifact(const PipelineConfig& config,
                                                                      const std::string& source);

struct AblationRow {
    std::string label;
    bool cs = false, as = false, mil = false, seg = false, ft = false;
    std::vector<double> corloc_per_class;
    double corloc_mean = 0.0;
};

/// CorLoc rows for the stage artifacts present in the workdir, mirroring
/// the incremental component toggles.
std::vector<AblationRow> ablation_rows(const PipelineConfig& config);

struct MaskoutStrategyReport {
    struct Row {
        MaskOutStrategy strategy;
        std::map<int, std::vector<double>> corloc_at_m_per_class;  // M -> per-class values
        std::map<int, double> corloc_at_m_mean;                    // M -> mean
    };
    std::vector<Row> rows;
    std::vector<int> m_values;
};

/// The strategy-comparison harness: scores every proposal once, ranks under
/// each mask-out strategy, and reports CorLoc@M for each strategy and M.
MaskoutStrategyReport run_maskout_comparison(const ClassifierModel& model, const Dataset& dataset,
                                             const ProposalSet& proposals, const std::array<double, 3>& mean_pixel,
                                             const MiningConfig& mining, const std::vector<int>& m_values,
                                             double overlap_t, int threads = 1);
std::string maskout_report_json(const MaskoutStrategyReport& report);

/// Run the harness against the workdir artifacts and write
/// maskout_comparison.json (report --maskout).
void write_maskout_comparison(const PipelineConfig& config, const std::vector<int>& m_values = {1, 10, 50});

}  // namespace wsol
