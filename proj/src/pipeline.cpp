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

#include "wsol/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "wsol/common.hpp"
#include "wsol/hash.hpp"
#include "wsol/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace wsol {

namespace {

// ---- config parsing ---------------------------------------------------------

void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> known) {
    if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known)
            if (key == k) ok = true;
        if (!ok) throw ConfigError("unknown key '" + key + "' in config section '" + section + "'");
    }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("bad value for config key '") + key + "'");
    }
}

void parse_data(const json& j, DataConfig& d) {
    check_keys(j, "data", {"manifest", "test_manifest", "proposals", "image_format", "synthetic", "grid"});
    d.manifest = get_or<std::string>(j, "manifest", d.manifest);
    d.test_manifest = get_or<std::string>(j, "test_manifest", d.test_manifest);
    d.proposals = get_or<std::string>(j, "proposals", d.proposals);
    d.image_format = get_or<std::string>(j, "image_format", d.image_format);
    if (j.contains("synthetic")) {
        const json& s = j.at("synthetic");
        check_keys(s, "data.synthetic",
                   {"num_images", "width", "height", "num_classes", "objects_min", "objects_max", "object_min_size",
                    "object_max_size", "clutter_density", "background_noise", "max_overlap"});
        auto& c = d.synthetic;
        c.num_images = get_or(s, "num_images", c.num_images);
        c.width = get_or(s, "width", c.width);
        c.height = get_or(s, "height", c.height);
        c.num_classes = get_or(s, "num_classes", c.num_classes);
        c.objects_min = get_or(s, "objects_min", c.objects_min);
        c.objects_max = get_or(s, "objects_max", c.objects_max);
        c.object_min_size = get_or(s, "object_min_size", c.object_min_size);
        c.object_max_size = get_or(s, "object_max_size", c.object_max_size);
        c.clutter_density = get_or(s, "clutter_density", c.clutter_density);
        c.background_noise = get_or(s, "background_noise", c.background_noise);
        c.max_overlap = get_or(s, "max_overlap", c.max_overlap);
    }
    if (j.contains("grid")) {
        const json& g = j.at("grid");
        check_keys(g, "data.grid", {"min_size", "max_size_frac", "scale_ratio", "stride_frac", "jitter_count"});
        auto& c = d.grid;
        c.min_size = get_or(g, "min_size", c.min_size);
        c.max_size_frac = get_or(g, "max_size_frac", c.max_size_frac);
        c.scale_ratio = get_or(g, "scale_ratio", c.scale_ratio);
        c.stride_frac = get_or(g, "stride_frac", c.stride_frac);
        c.jitter_count = get_or(g, "jitter_count", c.jitter_count);
    }
}

json data_to_json(const DataConfig& d) {
    return json{{"manifest", d.manifest},
                {"test_manifest", d.test_manifest},
                {"proposals", d.proposals},
                {"image_format", d.image_format},
                {"synthetic",
                 {{"num_images", d.synthetic.num_images},
                  {"width", d.synthetic.width},
                  {"height", d.synthetic.height},
                  {"num_classes", d.synthetic.num_classes},
                  {"objects_min", d.synthetic.objects_min},
                  {"objects_max", d.synthetic.objects_max},
                  {"object_min_size", d.synthetic.object_min_size},
                  {"object_max_size", d.synthetic.object_max_size},
                  {"clutter_density", d.synthetic.clutter_density},
                  {"background_noise", d.synthetic.background_noise},
                  {"max_overlap", d.synthetic.max_overlap}}},
                {"grid",
                 {{"min_size", d.grid.min_size},
                  {"max_size_frac", d.grid.max_size_frac},
                  {"scale_ratio", d.grid.scale_ratio},
                  {"stride_frac", d.grid.stride_frac},
                  {"jitter_count", d.grid.jitter_count}}}};
}

}  // namespace

PipelineConfig pipeline_config_from_json_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(origin + ": invalid JSON: " + e.what());
    }
    check_keys(j, "<top>", {"seed", "workdir", "threads", "data", "classifier", "mining", "mil", "refine", "detector",
                            "eval"});
    PipelineConfig c;
    c.seed = get_or<uint64_t>(j, "seed", c.seed);
    c.workdir = get_or<std::string>(j, "workdir", c.workdir);
    c.threads = get_or(j, "threads", c.threads);
    if (j.contains("data")) parse_data(j.at("data"), c.data);

    if (j.contains("classifier")) {
        const json& s = j.at("classifier");
        check_keys(s, "classifier",
                   {"input_size", "conv1_channels", "conv2_channels", "iterations", "batch_size", "learning_rate",
                    "momentum", "weight_decay"});
        auto& k = c.classifier;
        k.input_size = get_or(s, "input_size", k.input_size);
        k.conv1_channels = get_or(s, "conv1_channels", k.conv1_channels);
        k.conv2_channels = get_or(s, "conv2_channels", k.conv2_channels);
        k.iterations = get_or(s, "iterations", k.iterations);
        k.batch_size = get_or(s, "batch_size", k.batch_size);
        k.learning_rate = get_or(s, "learning_rate", k.learning_rate);
        k.momentum = get_or(s, "momentum", k.momentum);
        k.weight_decay = get_or(s, "weight_decay", k.weight_decay);
    }
    if (j.contains("mining")) {
        const json& s = j.at("mining");
        check_keys(s, "mining", {"strategy", "alpha", "contrast_weight", "activation_weight", "top_m"});
        auto& m = c.mining;
        m.strategy = mask_out_strategy_from_string(get_or<std::string>(s, "strategy", to_string(m.strategy)));
        m.alpha = get_or(s, "alpha", m.alpha);
        m.contrast_weight = get_or(s, "contrast_weight", m.contrast_weight);
        m.activation_weight = get_or(s, "activation_weight", m.activation_weight);
        m.top_m = get_or(s, "top_m", m.top_m);
    }
    if (j.contains("mil")) {
        const json& s = j.at("mil");
        check_keys(s, "mil", {"enabled", "lambda", "t_outer", "t_inner", "learning_rate", "tau", "negative_cap"});
        auto& m = c.mil;
        m.enabled = get_or(s, "enabled", m.enabled);
        m.lambda = get_or(s, "lambda", m.lambda);
        m.t_outer = get_or(s, "t_outer", m.t_outer);
        m.t_inner = get_or(s, "t_inner", m.t_inner);
        m.learning_rate = get_or(s, "learning_rate", m.learning_rate);
        m.tau = get_or(s, "tau", m.tau);
        m.negative_cap = get_or(s, "negative_cap", m.negative_cap);
    }
    if (j.contains("refine")) {
        const json& s = j.at("refine");
        check_keys(s, "refine", {"enabled", "expand_frac", "max_iterations"});
        auto& r = c.refine;
        r.enabled = get_or(s, "enabled", r.enabled);
        r.expand_frac = get_or(s, "expand_frac", r.expand_frac);
        r.max_iterations = get_or(s, "max_iterations", r.max_iterations);
    }
    if (j.contains("detector")) {
        const json& s = j.at("detector");
        check_keys(s, "detector",
                   {"iterations", "batch_size", "learning_rate", "lambda_reg", "fg_fraction", "score_threshold",
                    "nms_iou"});
        auto& d = c.detector;
        d.iterations = get_or(s, "iterations", d.iterations);
        d.batch_size = get_or(s, "batch_size", d.batch_size);
        d.learning_rate = get_or(s, "learning_rate", d.learning_rate);
        d.lambda_reg = get_or(s, "lambda_reg", d.lambda_reg);
        d.fg_fraction = get_or(s, "fg_fraction", d.fg_fraction);
        d.score_threshold = get_or(s, "score_threshold", d.score_threshold);
        d.nms_iou = get_or(s, "nms_iou", d.nms_iou);
    }
    if (j.contains("eval")) {
        const json& s = j.at("eval");
        check_keys(s, "eval", {"iou_threshold", "mining_overlap", "ap_interpolation", "similar_groups"});
        auto& e = c.eval;
        e.iou_threshold = get_or(s, "iou_threshold", e.iou_threshold);
        e.mining_overlap = get_or(s, "mining_overlap", e.mining_overlap);
        std::string interp = get_or<std::string>(s, "ap_interpolation", "all-points");
        if (interp == "all-points")
            e.ap_interpolation = ApInterpolation::AllPoints;
        else if (interp == "11-point")
            e.ap_interpolation = ApInterpolation::ElevenPoint;
        else
            throw ConfigError("eval.ap_interpolation must be 'all-points' or '11-point'");
        e.similar_groups = get_or<std::vector<std::vector<int>>>(s, "similar_groups", e.similar_groups);
    }
    return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return pipeline_config_from_json_text(text, path);
}

std::string PipelineConfig::canonical_json() const {
    json j;
    j["seed"] = seed;
    j["data"] = data_to_json(data);
    j["classifier"] = {{"input_size", classifier.input_size},
                       {"conv1_channels", classifier.conv1_channels},
                       {"conv2_channels", classifier.conv2_channels},
                       {"iterations", classifier.iterations},
                       {"batch_size", classifier.batch_size},
                       {"learning_rate", classifier.learning_rate},
                       {"momentum", classifier.momentum},
                       {"weight_decay", classifier.weight_decay}};
    j["mining"] = {{"strategy", to_string(mining.strategy)},
                   {"alpha", mining.alpha},
                   {"contrast_weight", mining.contrast_weight},
                   {"activation_weight", mining.activation_weight},
                   {"top_m", mining.top_m}};
    j["mil"] = {{"enabled", mil.enabled},     {"lambda", mil.lambda},
                {"t_outer", mil.t_outer},     {"t_inner", mil.t_inner},
                {"learning_rate", mil.learning_rate}, {"tau", mil.tau},
                {"negative_cap", mil.negative_cap}};
    j["refine"] = {{"enabled", refine.enabled},
                   {"expand_frac", refine.expand_frac},
                   {"max_iterations", refine.max_iterations}};
    j["detector"] = {{"iterations", detector.iterations},
                     {"batch_size", detector.batch_size},
                     {"learning_rate", detector.learning_rate},
                     {"lambda_reg", detector.lambda_reg},
                     {"fg_fraction", detector.fg_fraction},
                     {"score_threshold", detector.score_threshold},
                     {"nms_iou", detector.nms_iou}};
    j["eval"] = {{"iou_threshold", eval.iou_threshold},
                 {"mining_overlap", eval.mining_overlap},
                 {"ap_interpolation", eval.ap_interpolation == ApInterpolation::AllPoints ? "all-points" : "11-point"},
                 {"similar_groups", eval.similar_groups}};
    return j.dump();
}

std::string PipelineConfig::config_hash() const { return hash_string_hex(canonical_json()); }

void save_pipeline_config(const std::string& path, const PipelineConfig& config) {
    json j = json::parse(config.canonical_json());
    j["workdir"] = config.workdir;
    j["threads"] = config.threads;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config: " + path);
    out << j.dump(2) << "\n";
}

// ---- stage plumbing ---------------------------------------------------------

std::string artifact_path(const PipelineConfig& config, const std::string& name) {
    return (fs::path(config.workdir) / name).string();
}

namespace {

struct StageManifest {
    std::string stage;
    std::string config_hash;
    uint64_t seed = 0;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    json inputs = json::object();
    json outputs = json::object();

    void add_input(const std::string& name, const std::string& path) { inputs[name] = hash_file_hex(path); }
    void add_output(const std::string& name, const std::string& path) { outputs[name] = hash_file_hex(path); }

    void write(const PipelineConfig& config) const {
        json j;
        j["stage"] = stage;
        j["config_hash"] = config_hash;
        j["seed"] = seed;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        j["wall_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start)
                           .count();
        std::string path = artifact_path(config, stage + ".manifest.json");
        std::ofstream out(path);
        if (!out) throw IoError("cannot write stage manifest: " + path);
        out << j.dump(2) << "\n";
    }
};

StageManifest begin_stage(const PipelineConfig& config, const std::string& stage) {
    fs::create_directories(config.workdir);
    StageManifest m;
    m.stage = stage;
    m.config_hash = config.config_hash();
    m.seed = config.seed;
    return m;
}

/// Refuse to chain onto artifacts produced under a different config.
void check_chain(const PipelineConfig& config, const StageOptions& opts,
                 std::initializer_list<const char*> upstream) {
    if (opts.force) return;
    for (const char* stage : upstream) {
        std::string path = artifact_path(config, std::string(stage) + ".manifest.json");
        std::ifstream in(path);
        if (!in) continue;  // hand-placed artifacts have no manifest to check
        json j;
        try {
            in >> j;
        } catch (const json::exception&) {
            continue;
        }
        std::string upstream_hash = j.value("config_hash", "");
        if (!upstream_hash.empty() && upstream_hash != config.config_hash())
            throw ConfigError("config hash mismatch with upstream stage '" + std::string(stage) +
                              "' (artifacts were produced under a different config; use --force to override)");
    }
}

void require_file(const std::string& path, const std::string& what, const std::string& producer) {
    if (!fs::exists(path))
        throw MissingArtifactError(what + " not found at " + path + "; run '" + producer + "' first");
}

uint64_t derived_seed(const PipelineConfig& config, uint64_t salt) { return config.seed ^ (salt * 0x9e3779b97f4a7c15ull); }

std::string dataset_manifest_path(const PipelineConfig& config) {
    if (!config.data.manifest.empty()) return config.data.manifest;
    return artifact_path(config, "dataset/manifest.json");
}

std::string proposals_path(const PipelineConfig& config) {
    if (!config.data.proposals.empty()) return config.data.proposals;
    return artifact_path(config, "proposals.csv");
}

}  // namespace

Dataset pipeline_dataset(const PipelineConfig& config) {
    std::string path = dataset_manifest_path(config);
    require_file(path, "dataset manifest", "gen-data");
    return load_manifest(path);
}

Dataset pipeline_eval_dataset(const PipelineConfig& config) {
    if (!config.data.test_manifest.empty()) {
        require_file(config.data.test_manifest, "test dataset manifest", "gen-data");
        return load_manifest(config.data.test_manifest);
    }
    return pipeline_dataset(config);
}

ProposalSet pipeline_proposals(const PipelineConfig& config, const Dataset& dataset) {
    std::string path = proposals_path(config);
    require_file(path, "proposals", "gen-data");
    return load_proposals(path, dataset);
}

// ---- stages -----------------------------------------------------------------

void stage_gen_data(const PipelineConfig& config, const StageOptions&) {
    StageManifest manifest = begin_stage(config, "gen-data");
    Dataset dataset;
    if (config.data.manifest.empty()) {
        SyntheticConfig sc = config.data.synthetic;
        sc.seed = config.seed;
        dataset = generate_synthetic(sc);
        save_dataset(dataset, artifact_path(config, "dataset"), config.data.image_format);
        manifest.add_output("dataset", artifact_path(config, "dataset/manifest.json"));
    } else {
        require_file(config.data.manifest, "dataset manifest", "(external input)");
        dataset = load_manifest(config.data.manifest);
        manifest.add_input("dataset", config.data.manifest);
    }
    if (config.data.proposals.empty()) {
        GridProposalConfig gc = config.data.grid;
        gc.seed = derived_seed(config, 0x6e1d);
        ProposalSet proposals = grid_proposals_for(dataset, gc);
        save_proposals(artifact_path(config, "proposals.csv"), proposals);
        manifest.add_output("proposals", artifact_path(config, "proposals.csv"));
    } else {
        manifest.add_input("proposals", config.data.proposals);
    }
    manifest.write(config);
}

void stage_train_cls(const PipelineConfig& config, const StageOptions& opts) {
    check_chain(config, opts, {"gen-data"});
    StageManifest manifest = begin_stage(config, "train-cls");
    Dataset dataset = pipeline_dataset(config);
    manifest.add_input("dataset", dataset_manifest_path(config));

    ClassifierConfig cc = config.classifier;
    cc.num_classes = dataset.num_classes;
    cc.seed = config.seed;
    ClassifierModel model = train_classifier(dataset, cc);
    save_classifier(artifact_path(config, "classifier.wscm"), model);
    manifest.add_output("classifier", artifact_path(config, "classifier.wscm"));
    manifest.write(config);
}

void stage_mine(const PipelineConfig& config, const StageOptions& opts) {
    check_chain(config, opts, {"gen-data", "train-cls"});
    StageManifest manifest = begin_stage(config, "mine");
    Dataset dataset = pipeline_dataset(config);
    ProposalSet proposals = pipeline_proposals(config, dataset);
    require_file(artifact_path(config, "classifier.wscm"), "classifier checkpoint", "train-cls");
    ClassifierModel model = load_classifier(artifact_path(config, "classifier.wscm"));
    manifest.add_input("dataset", dataset_manifest_path(config));
    manifest.add_input("proposals", proposals_path(config));
    manifest.add_input("classifier", artifact_path(config, "classifier.wscm"));

    std::array<double, 3> mean = mean_pixel(dataset);
    MiningConfig mc = config.mining;
    mc.threads = config.threads;
    MinedSet mined = mine_dataset(model, dataset, proposals, mean, mc);
    save_mined(artifact_path(config, "mined.csv"), mined);
    manifest.add_output("mined", artifact_path(config, "mined.csv"));
    manifest.write(config);
}

void stage_mil(const PipelineConfig& config, const StageOptions& opts) {
    check_chain(config, opts, {"mine", "train-cls"});
    StageManifest manifest = begin_stage(config, "mil");
    Dataset dataset = pipeline_dataset(config);
    require_file(artifact_path(config, "mined.csv"), "mined proposals", "mine");
    require_file(artifact_path(config, "classifier.wscm"), "classifier checkpoint", "train-cls");
    MinedSet mined = load_mined(artifact_path(config, "mined.csv"));
    manifest.add_input("dataset", dataset_manifest_path(config));
    manifest.add_input("mined", artifact_path(config, "mined.csv"));
    manifest.add_input("classifier", artifact_path(config, "classifier.wscm"));

    std::vector<SelectedInstance> selected;
    if (!config.mil.enabled) {
        // ablation passthrough: keep the top-ranked mined proposal per bag
        for (const auto& img : dataset.images) {
            auto it = mined.find(img.id);
            if (it == mined.end()) continue;
            for (const auto& [class_id, list] : it->second)
                if (!list.empty())
                    selected.push_back(SelectedInstance{class_id, img.id, list.front().box, list.front().fused});
        }
    } else {
        ClassifierModel model = load_classifier(artifact_path(config, "classifier.wscm"));
        for (int c = 0; c < dataset.num_classes; ++c) {
            std::vector<Bag> bags = build_bags_for_class(model, dataset, mined, c, config.mil.negative_cap);
            bool has_positive = false, has_negative = false;
            for (const auto& bag : bags) (bag.positive ? has_positive : has_negative) = true;
            if (!has_positive || !has_negative) {
                std::cerr << "[mil] class " << c << ": skipped (needs positive and negative bags)\n";
                continue;
            }
            MilConfig mc;
            mc.lambda = config.mil.lambda;
            mc.t_outer = config.mil.t_outer;
            mc.t_inner = config.mil.t_inner;
            mc.learning_rate = config.mil.learning_rate;
            mc.seed = derived_seed(config, 0xa11c + static_cast<uint64_t>(c));
            MilResult result = mil_train(bags, mc);
            for (auto& s : select_instances(result.classifier, bags, config.mil.tau)) selected.push_back(std::move(s));
        }
    }
    save_selected(artifact_path(config, "selected.csv"), selected);
    manifest.add_output("selected", artifact_path(config, "selected.csv"));
    manifest.write(config);
}

void stage_refine(const PipelineConfig& config, const StageOptions& opts) {
    check_chain(config, opts, {"mil"});
    StageManifest manifest = begin_stage(config, "refine");
    Dataset dataset = pipeline_dataset(config);
    require_file(artifact_path(config, "selected.csv"), "selected instances", "mil");
    std::vector<SelectedInstance> selected = load_selected(artifact_path(config, "selected.csv"));
    manifest.add_input("dataset", dataset_manifest_path(config));
    manifest.add_input("selected", artifact_path(config, "selected.csv"));

    std::vector<SelectedInstance> refined = selected;
    if (config.refine.enabled) {
        SegmenterConfig sc;
        sc.expand_frac = config.refine.expand_frac;
        sc.max_iterations = config.refine.max_iterations;
        parallel_for(refined.size(), config.threads, [&](size_t i) {
            const LabeledImage& img = dataset.require(refined[i].image_id);
            refined[i].box = refine_box(img.pixels, refined[i].box, sc);
        });
    }
    save_selected(artifact_path(config, "refined.csv"), refined);
    manifest.add_output("refined", artifact_path(config, "refined.csv"));
    manifest.write(config);
}

void stage_train_det(const PipelineConfig& config, const StageOptions& opts) {
    check_chain(config, opts, {"refine", "train-cls"});
    StageManifest manifest = begin_stage(config, "train-det");
    Dataset dataset = pipeline_dataset(config);
    ProposalSet proposals = pipeline_proposals(config, dataset);
    require_file(artifact_path(config, "refined.csv"), "refined boxes", "refine");
    require_file(artifact_path(config, "classifier.wscm"), "classifier checkpoint", "train-cls");
    std::vector<SelectedInstance> refined = load_selected(artifact_path(config, "refined.csv"));
    ClassifierModel feature_model = load_classifier(artifact_path(config, "classifier.wscm"));
    manifest.add_input("dataset", dataset_manifest_path(config));
    manifest.add_input("proposals", proposals_path(config));
    manifest.add_input("refined", artifact_path(config, "refined.csv"));
    manifest.add_input("classifier", artifact_path(config, "classifier.wscm"));

    TrainingBoxes mined_boxes;
    for (const auto& s : refined) mined_boxes[s.image_id].push_back(TrainingBox{s.class_id, s.box});
    // the refined boxes themselves join the proposal pool as guaranteed positives
    ProposalSet roi_proposals = proposals;
    for (const auto& s : refined) roi_proposals[s.image_id].push_back(Proposal{s.box, 0.0});

    std::vector<RoiSample> roi_set = build_roi_set(roi_proposals, mined_boxes);
    extract_roi_features(roi_set, feature_model, dataset);

    DetectorConfig dc;
    dc.num_classes = dataset.num_classes;
    dc.iterations = config.detector.iterations;
    dc.batch_size = config.detector.batch_size;
    dc.learning_rate = config.detector.learning_rate;
    dc.lambda_reg = config.detector.lambda_reg;
    dc.fg_fraction = config.detector.fg_fraction;
    dc.seed = config.seed;
    DetectorTrainStats stats;
    DetectorModel model = train_detector(roi_set, dc, &stats);
    for (const auto& w : stats.warnings) std::cerr << "[train-det] warning: " << w << "\n";
    save_detector(artifact_path(config, "detector.wsdm"), model);
    manifest.add_output("detector", artifact_path(config, "detector.wsdm"));
    manifest.write(config);
}

void stage_detect(const PipelineConfig& config, const StageOptions& opts) {
    check_chain(config, opts, {"train-det", "train-cls"});
    StageManifest manifest = begin_stage(config, "detect");
    require_file(artifact_path(config, "detector.wsdm"), "detector checkpoint", "train-det");
    require_file(artifact_path(config, "classifier.wscm"), "classifier checkpoint", "train-cls");
    DetectorModel model = load_detector(artifact_path(config, "detector.wsdm"));
    ClassifierModel feature_model = load_classifier(artifact_path(config, "classifier.wscm"));
    manifest.add_input("detector", artifact_path(config, "detector.wsdm"));
    manifest.add_input("classifier", artifact_path(config, "classifier.wscm"));

    Dataset dataset = pipeline_eval_dataset(config);
    ProposalSet proposals;
    if (!config.data.test_manifest.empty()) {
        GridProposalConfig gc = config.data.grid;
        gc.seed = derived_seed(config, 0x6e1d);
        proposals = grid_proposals_for(dataset, gc);
    } else {
        proposals = pipeline_proposals(config, dataset);
        manifest.add_input("proposals", proposals_path(config));
    }

    std::vector<std::vector<Detection>> per_image(dataset.images.size());
    parallel_for(dataset.images.size(), config.threads, [&](size_t i) {
        const LabeledImage& img = dataset.images[i];
        auto it = proposals.find(img.id);
        if (it == proposals.end()) return;
        per_image[i] = detect(model, feature_model, img, it->second, config.detector.score_threshold,
                              config.detector.nms_iou);
    });
    std::vector<Detection> all;
    for (auto& v : per_image)
        for (auto& d : v) all.push_back(std::move(d));
    save_detections(artifact_path(config, "detections.csv"), all);
    manifest.add_output("detections", artifact_path(config, "detections.csv"));
    manifest.write(config);
}

std::map<int, std::map<std::string, Box>> localizations_from_artifact(const PipelineConfig& config,
                                                                      const std::string& source) {
    std::map<int, std::map<std::string, Box>> out;
    auto best_of = [&out](int class_id, const std::string& image_id, const Box& box, double score,
                          std::map<std::pair<int, std::string>, double>& best) {
        auto key = std::make_pair(class_id, image_id);
        auto it = best.find(key);
        if (it == best.end() || score > it->second) {
            best[key] = score;
            out[class_id][image_id] = box;
        }
    };
    std::map<std::pair<int, std::string>, double> best;

    if (source == "mined" || source == "mined-contrast") {
        MinedSet mined = load_mined(artifact_path(config, "mined.csv"));
        for (const auto& [image_id, per_class] : mined)
            for (const auto& [class_id, list] : per_class)
                for (const auto& sp : list)
                    best_of(class_id, image_id, sp.box, source == "mined" ? sp.fused : sp.contrast, best);
    } else if (source == "selected" || source == "refined") {
        auto rows = load_selected(artifact_path(config, source + ".csv"));
        for (const auto& s : rows) best_of(s.class_id, s.image_id, s.box, s.score, best);
    } else if (source == "detections") {
        auto rows = load_detections(artifact_path(config, "detections.csv"));
        for (const auto& d : rows) best_of(d.class_id, d.image_id, d.box, d.score, best);
    } else {
        throw Error("unknown localization source: " + source);
    }
    return out;
}

namespace {

json corloc_block(const PipelineConfig& config, const Dataset& dataset,
                  const std::map<int, std::map<std::string, Box>>& locs) {
    json per_class = json::array();
    double sum = 0.0;
    for (int c = 0; c < dataset.num_classes; ++c) {
        auto it = locs.find(c);
        double v = it == locs.end() ? 0.0
                                    : corloc(it->second, dataset, c, config.eval.iou_threshold);
        per_class.push_back(v);
        sum += v;
    }
    return json{{"per_class", per_class}, {"mean", dataset.num_classes ? sum / dataset.num_classes : 0.0}};
}

}  // namespace

void stage_eval(const PipelineConfig& config, const StageOptions& opts) {
    check_chain(config, opts, {"refine", "detect"});
    StageManifest manifest = begin_stage(config, "eval");
    Dataset dataset = pipeline_dataset(config);
    require_file(artifact_path(config, "refined.csv"), "refined boxes", "refine");
    require_file(artifact_path(config, "detections.csv"), "detections", "detect");
    manifest.add_input("dataset", dataset_manifest_path(config));
    manifest.add_input("refined", artifact_path(config, "refined.csv"));
    manifest.add_input("detections", artifact_path(config, "detections.csv"));

    json report;
    report["iou_threshold"] = config.eval.iou_threshold;

    auto locs = localizations_from_artifact(config, "refined");
    report["corloc"] = corloc_block(config, dataset, locs);
    report["corloc"]["source"] = "refined.csv";

    Dataset eval_ds = pipeline_eval_dataset(config);
    std::vector<Detection> detections = load_detections(artifact_path(config, "detections.csv"));
    json det;
    json aps = json::array();
    for (int c = 0; c < eval_ds.num_classes; ++c) {
        std::vector<std::pair<double, double>> curve;
        auto ap = average_precision(detections, eval_ds, c, config.eval.iou_threshold, config.eval.ap_interpolation,
                                    &curve);
        aps.push_back(ap.has_value() ? json(*ap) : json());
        std::string pr_path = artifact_path(config, "pr_class" + std::to_string(c) + ".csv");
        std::ofstream pr(pr_path);
        if (!pr) throw IoError("cannot write PR curve: " + pr_path);
        pr << "recall,precision\n";
        for (const auto& [r, p] : curve) pr << format_double(r) << "," << format_double(p) << "\n";
    }
    int skipped = 0;
    det["per_class_ap"] = aps;
    det["map"] = mean_ap(detections, eval_ds, config.eval.iou_threshold, config.eval.ap_interpolation, &skipped);
    det["classes_without_gt"] = skipped;

    ErrorBreakdown errors = error_analysis(detections, eval_ds, config.eval);
    json err = json::array();
    for (int c = 0; c < eval_ds.num_classes; ++c)
        err.push_back({{"class", c},
                       {"cor", errors.count(c, ErrorBreakdown::Cor)},
                       {"loc", errors.count(c, ErrorBreakdown::Loc)},
                       {"sim", errors.count(c, ErrorBreakdown::Sim)},
                       {"oth", errors.count(c, ErrorBreakdown::Oth)},
                       {"bg", errors.count(c, ErrorBreakdown::BG)}});
    det["error_analysis"] = err;
    report["detection"] = det;

    std::string out_path = artifact_path(config, "eval.json");
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write eval report: " + out_path);
    out << report.dump(2) << "\n";
    manifest.add_output("eval", out_path);
    manifest.write(config);
}

std::vector<AblationRow> ablation_rows(const PipelineConfig& config) {
    Dataset dataset = pipeline_dataset(config);
    std::vector<AblationRow> rows;
    bool as_on = config.mining.activation_weight > 0.0;

    auto add_row = [&](const std::string& label, const std::string& source, bool as, bool mil, bool seg, bool ft) {
        AblationRow row;
        row.label = label;
        row.cs = true;
        row.as = as;
        row.mil = mil;
        row.seg = seg;
        row.ft = ft;
        auto locs = localizations_from_artifact(config, source);
        double sum = 0.0;
        for (int c = 0; c < dataset.num_classes; ++c) {
            auto it = locs.find(c);
            double v = it == locs.end() ? 0.0 : corloc(it->second, dataset, c, config.eval.iou_threshold);
            row.corloc_per_class.push_back(v);
            sum += v;
        }
        row.corloc_mean = dataset.num_classes ? sum / dataset.num_classes : 0.0;
        rows.push_back(std::move(row));
    };

    if (fs::exists(artifact_path(config, "mined.csv"))) {
        add_row("CS", "mined-contrast", false, false, false, false);
        if (as_on) add_row("CS+AS", "mined", true, false, false, false);
    }
    std::string mid = as_on ? "CS+AS" : "CS";
    if (fs::exists(artifact_path(config, "selected.csv")) && config.mil.enabled)
        add_row(mid + "+MIL", "selected", as_on, true, false, false);
    if (fs::exists(artifact_path(config, "refined.csv")) && config.refine.enabled)
        add_row(mid + (config.mil.enabled ? "+MIL" : "") + "+Seg", "refined", as_on, config.mil.enabled, true, false);
    if (fs::exists(artifact_path(config, "detections.csv")) && config.data.test_manifest.empty())
        add_row(mid + (config.mil.enabled ? "+MIL" : "") + (config.refine.enabled ? "+Seg" : "") + "+FT",
                "detections", as_on, config.mil.enabled, config.refine.enabled, true);
    return rows;
}

void stage_report(const PipelineConfig& config, const StageOptions& opts) {
    check_chain(config, opts, {"mine", "mil", "refine", "detect", "eval"});
    StageManifest manifest = begin_stage(config, "report");
    if (!fs::exists(artifact_path(config, "mined.csv")))
        throw MissingArtifactError("mined proposals not found at " + artifact_path(config, "mined.csv") +
                                   "; run 'mine' first");

    json report;
    std::string eval_path = artifact_path(config, "eval.json");
    if (fs::exists(eval_path)) {
        std::ifstream in(eval_path);
        json eval_json;
        in >> eval_json;
        report["eval"] = eval_json;
        manifest.add_input("eval", eval_path);
    }

    json table = json::array();
    std::vector<AblationRow> rows = ablation_rows(config);
    if (!opts.quiet) {
        std::cout << "ablation (CorLoc @ IoU>=" << config.eval.iou_threshold << ")\n";
        std::cout << "  CS  AS MIL Seg  FT | per-class | mean\n";
    }
    for (const auto& row : rows) {
        json r;
        r["label"] = row.label;
        r["cs"] = row.cs;
        r["as"] = row.as;
        r["mil"] = row.mil;
        r["seg"] = row.seg;
        r["ft"] = row.ft;
        r["corloc_per_class"] = row.corloc_per_class;
        r["corloc_mean"] = row.corloc_mean;
        table.push_back(r);
        if (opts.quiet) continue;
        auto mark = [](bool b) { return b ? "  x" : "   "; };
        std::cout << mark(row.cs) << " " << mark(row.as) << " " << mark(row.mil) << " " << mark(row.seg) << " "
                  << mark(row.ft) << " |";
        for (double v : row.corloc_per_class) std::cout << " " << format_double(v);
        std::cout << " | " << format_double(row.corloc_mean) << "  (" << row.label << ")\n";
    }
    report["ablation"] = table;

    std::string out_path = artifact_path(config, "report.json");
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write report: " + out_path);
    out << report.dump(2) << "\n";
    manifest.add_output("report", out_path);
    manifest.write(config);
}

void run_stage(const std::string& name, const PipelineConfig& config, const StageOptions& opts) {
    if (name == "gen-data") return stage_gen_data(config, opts);
    if (name == "train-cls") return stage_train_cls(config, opts);
    if (name == "mine") return stage_mine(config, opts);
    if (name == "mil") return stage_mil(config, opts);
    if (name == "refine") return stage_refine(config, opts);
    if (name == "train-det") return stage_train_det(config, opts);
    if (name == "detect") return stage_detect(config, opts);
    if (name == "eval") return stage_eval(config, opts);
    if (name == "report") return stage_report(config, opts);
    throw ConfigError("unknown stage: " + name);
}

MaskoutStrategyReport run_maskout_comparison(const ClassifierModel& model, const Dataset& dataset,
                                             const ProposalSet& proposals, const std::array<double, 3>& mean_pixel,
                                             const MiningConfig& mining, const std::vector<int>& m_values,
                                             double overlap_t, int threads) {
    const std::vector<MaskOutStrategy> strategies = {MaskOutStrategy::InOut, MaskOutStrategy::WholeOut,
                                                     MaskOutStrategy::In};
    int max_m = 1;
    for (int m : m_values) max_m = std::max(max_m, m);

    // strategy -> class -> image -> ranked boxes
    std::vector<std::map<int, std::map<std::string, std::vector<Box>>>> ranked(strategies.size());
    std::vector<std::array<std::map<int, std::vector<Box>>, 3>> per_image(dataset.images.size());

    parallel_for(dataset.images.size(), threads, [&](size_t i) {
        const LabeledImage& img = dataset.images[i];
        auto it = proposals.find(img.id);
        if (it == proposals.end() || it->second.empty()) return;
        auto raws = score_image_proposals_multi(model, img, it->second, strategies, mean_pixel, mining.alpha);
        for (size_t si = 0; si < strategies.size(); ++si) {
            auto ranked_classes =
                rank_image(raws[si], mining.contrast_weight, mining.activation_weight, std::max(max_m, mining.top_m));
            for (const auto& [class_id, list] : ranked_classes) {
                std::vector<Box> boxes;
                for (const auto& sp : list) boxes.push_back(sp.box);
                per_image[i][si][class_id] = std::move(boxes);
            }
        }
    });
    for (size_t i = 0; i < per_image.size(); ++i)
        for (size_t si = 0; si < strategies.size(); ++si)
            for (auto& [class_id, boxes] : per_image[i][si])
                ranked[si][class_id][dataset.images[i].id] = std::move(boxes);

    MaskoutStrategyReport report;
    report.m_values = m_values;
    for (size_t si = 0; si < strategies.size(); ++si) {
        MaskoutStrategyReport::Row row;
        row.strategy = strategies[si];
        for (int m : m_values) {
            std::vector<double> per_class;
            double sum = 0.0;
            for (int c = 0; c < dataset.num_classes; ++c) {
                auto it = ranked[si].find(c);
                double v = it == ranked[si].end()
                               ? 0.0
                               : corloc_at_m(it->second, dataset, c, m, overlap_t);
                per_class.push_back(v);
                sum += v;
            }
            row.corloc_at_m_per_class[m] = per_class;
            row.corloc_at_m_mean[m] = dataset.num_classes ? sum / dataset.num_classes : 0.0;
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

void write_maskout_comparison(const PipelineConfig& config, const std::vector<int>& m_values) {
    require_file(artifact_path(config, "classifier.wscm"), "classifier checkpoint", "train-cls");
    ClassifierModel model = load_classifier(artifact_path(config, "classifier.wscm"));
    Dataset dataset = pipeline_dataset(config);
    ProposalSet proposals = pipeline_proposals(config, dataset);
    MaskoutStrategyReport report = run_maskout_comparison(model, dataset, proposals, mean_pixel(dataset),
                                                          config.mining, m_values, config.eval.mining_overlap,
                                                          config.threads);
    std::string path = artifact_path(config, "maskout_comparison.json");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write maskout comparison: " + path);
    out << maskout_report_json(report) << "\n";
}

std::string maskout_report_json(const MaskoutStrategyReport& report) {
    json j;
    j["m_values"] = report.m_values;
    json rows = json::array();
    for (const auto& row : report.rows) {
        json r;
        r["strategy"] = to_string(row.strategy);
        for (const auto& [m, per_class] : row.corloc_at_m_per_class) {
            r["corloc_at_m"][std::to_string(m)] = {{"per_class", per_class},
                                                   {"mean", row.corloc_at_m_mean.at(m)}};
        }
        rows.push_back(r);
    }
    j["strategies"] = rows;
    return j.dump(2);
}

}  // namespace wsol
