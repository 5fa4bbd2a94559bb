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

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "wsol/common.hpp"
#include "wsol/pipeline.hpp"

namespace {

constexpr const char* kStages[] = {"gen-data", "train-cls", "mine",   "mil",  "refine",
                                   "train-det", "detect",   "eval",   "report"};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"wsolkit - weakly supervised object localization pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::string seed_override;
    std::string mask_out_override;
    int threads_override = 0;
    bool force = false;
    bool no_as = false, no_mil = false, no_seg = false;
    bool maskout_report = false;

    for (const char* stage : kStages) {
        CLI::App* sub = app.add_subcommand(stage, std::string("run the ") + stage + " stage");
        sub->add_option("--config", config_path, "pipeline config JSON")->required();
        sub->add_flag("--force", force, "skip config-hash chain checks");
        sub->add_option("--threads", threads_override, "worker threads (output is identical for any count)");
        sub->add_option("--seed", seed_override, "override the config seed");
        sub->add_flag("--no-as", no_as, "disable activation scores (contrast-only ranking)");
        sub->add_flag("--no-mil", no_mil, "bypass MIL (keep top-ranked mined proposals)");
        sub->add_flag("--no-seg", no_seg, "bypass segmentation refinement");
        sub->add_option("--mask-out", mask_out_override, "contrast strategy: in-out, whole-out or in");
        if (std::string(stage) == "report")
            sub->add_flag("--maskout", maskout_report, "also emit the mask-out strategy comparison");
    }

    CLI11_PARSE(app, argc, argv);

    try {
        wsol::PipelineConfig config = wsol::load_pipeline_config(config_path);
        if (const char* env_seed = std::getenv("WSOLKIT_SEED")) config.seed = std::stoull(env_seed);
        if (!seed_override.empty()) config.seed = std::stoull(seed_override);
        if (threads_override > 0) config.threads = threads_override;
        if (no_as) config.mining.activation_weight = 0.0;
        if (no_mil) config.mil.enabled = false;
        if (no_seg) config.refine.enabled = false;
        if (!mask_out_override.empty()) config.mining.strategy = wsol::mask_out_strategy_from_string(mask_out_override);

        wsol::StageOptions opts;
        opts.force = force;
        std::string stage = app.get_subcommands().front()->get_name();
        wsol::run_stage(stage, config, opts);
        if (stage == "report" && maskout_report) wsol::write_maskout_comparison(config);
    } catch (const wsol::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const wsol::MissingArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
