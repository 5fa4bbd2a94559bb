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

#include "wsol/mining.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "wsol/common.hpp"
#include "wsol/parallel.hpp"

namespace wsol {

namespace {

// Dyadic quantum for activation map values; see ActivationMap docs.
constexpr double kMapQuantum = 0x1.0p-20;
constexpr double kMapValueLimit = 0x1.0p20;

double quantize_map_value(double v) {
    if (!(std::abs(v) < kMapValueLimit)) throw Error("activation map value out of range");
    return std::round(v / kMapQuantum) * kMapQuantum;
}

}  // namespace

MaskOutStrategy mask_out_strategy_from_string(const std::string& name) {
    if (name == "in-out") return MaskOutStrategy::InOut;
    if (name == "whole-out") return MaskOutStrategy::WholeOut;
    if (name == "in") return MaskOutStrategy::In;
    throw ConfigError("unknown mask-out strategy: " + name + " (expected in-out, whole-out or in)");
}

std::string to_string(MaskOutStrategy s) {
    switch (s) {
        case MaskOutStrategy::InOut: return "in-out";
        case MaskOutStrategy::WholeOut: return "whole-out";
        case MaskOutStrategy::In: return "in";
    }
    return "?";
}

Image mask_out(const Image& image, const Box& box, const std::array<double, 3>& mean_pixel) {
    if (!box.valid()) throw Error("mask_out: degenerate box");
    if (!contains(image.bounds(), box)) throw Error("mask_out: box outside image");
    Image out = image;
    float rgb[3] = {static_cast<float>(mean_pixel[0]), static_cast<float>(mean_pixel[1]),
                    static_cast<float>(mean_pixel[2])};
    fill_box(out, box, rgb);
    return out;
}

ActivationMap activation_map_from_values(int width, int height, int image_width, int image_height,
                                         std::vector<double> values, int class_id) {
    if (width <= 0 || height <= 0 || values.size() != static_cast<size_t>(width) * height)
        throw Error("activation_map_from_values: bad dimensions");
    ActivationMap m;
    m.width = width;
    m.height = height;
    m.image_width = image_width;
    m.image_height = image_height;
    m.class_id = class_id;
    m.values = std::move(values);
    for (double& v : m.values) v = quantize_map_value(v);
    m.integral.assign(static_cast<size_t>(width + 1) * (height + 1), 0.0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            m.integral[static_cast<size_t>(y + 1) * (width + 1) + (x + 1)] =
                m.value(x, y) + m.integral_at(x, y + 1) + m.integral_at(x + 1, y) - m.integral_at(x, y);
    return m;
}

ActivationMap class_activation_map(const ClassifierModel& model, const FeatureMapStack& features, int image_width,
                                   int image_height, int class_id) {
    if (class_id < 0 || class_id >= model.num_classes()) throw Error("class_activation_map: class index out of range");
    const size_t area = static_cast<size_t>(features.width) * features.height;
    std::vector<double> values(area, 0.0);
    const int k = features.k;
    const double* w = model.fc_w.data() + static_cast<size_t>(class_id) * k;
    for (int f = 0; f < k; ++f) {
        const double* plane = features.plane(f);
        for (size_t i = 0; i < area; ++i) values[i] += w[f] * plane[i];
    }

    // Consistency of the CAM decomposition with the forward pass:
    // mean(m_c) must equal logit_c - bias_c because GAP divides by area.
    double sum = 0.0;
    for (size_t i = 0; i < area; ++i) sum += values[i];
    double expected = (features.logits[class_id] - model.fc_b[class_id]) * static_cast<double>(area);
    double scale = std::max({std::abs(sum), std::abs(expected), 1e-12});
    if (std::abs(sum - expected) / scale > 1e-6)
        throw Error("class_activation_map: GAP/logit identity violated");

    return activation_map_from_values(features.width, features.height, image_width, image_height, std::move(values),
                                      class_id);
}

ActivationMap class_activation_map(const ClassifierModel& model, const Image& image, int class_id) {
    FeatureMapStack features = feature_maps(model, image);
    return class_activation_map(model, features, image.width, image.height, class_id);
}

Box map_box_to_grid(const Box& image_box, int image_w, int image_h, int map_w, int map_h) {
    double sx = static_cast<double>(map_w) / image_w;
    double sy = static_cast<double>(map_h) / image_h;
    Box b;
    b.x1 = static_cast<int>(std::floor(image_box.x1 * sx));
    b.y1 = static_cast<int>(std::floor(image_box.y1 * sy));
    b.x2 = static_cast<int>(std::ceil(image_box.x2 * sx));
    b.y2 = static_cast<int>(std::ceil(image_box.y2 * sy));
    return clip_box(b, map_w, map_h);
}

double box_response(const ActivationMap& map, const Box& image_box, bool* degenerate) {
    Box b = map_box_to_grid(image_box, map.image_width, map.image_height, map.width, map.height);
    if (degenerate) *degenerate = false;
    if (!b.valid()) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    return map.integral_at(b.x1, b.y1) + map.integral_at(b.x2, b.y2) - map.integral_at(b.x1, b.y2) -
           map.integral_at(b.x2, b.y1);
}

double activation_score(const ActivationMap& map, const Box& image_box, double alpha, bool* degenerate_total) {
    if (!image_box.valid()) throw Error("activation_score: degenerate box");
    double r = box_response(map, image_box);
    double score = r / static_cast<double>(image_box.area());
    double total = map.total();
    if (degenerate_total) *degenerate_total = false;
    if (total != 0.0) {
        score += alpha * r / total;
    } else if (degenerate_total) {
        *degenerate_total = true;
    }
    return score;
}

namespace {

/// Crop forward for In/InOut and mask-out forward for InOut/WholeOut; the
/// whole-image probabilities come in precomputed.
std::vector<double> contrast_vector(const ClassifierModel& model, const Image& image, const Box& box,
                                    MaskOutStrategy strategy, const std::array<double, 3>& mean_pixel,
                                    const std::vector<double>* p_whole) {
    Box clipped = clip_box(box, image.width, image.height);
    if (clipped.width() < 2 || clipped.height() < 2) throw Error("contrast_score: crop smaller than 2x2");
    const int classes = model.num_classes();
    std::vector<double> out(static_cast<size_t>(classes));

    std::vector<double> p_in, p_out;
    if (strategy != MaskOutStrategy::WholeOut) p_in = forward(model, crop(image, clipped)).probs;
    if (strategy != MaskOutStrategy::In) p_out = forward(model, mask_out(image, clipped, mean_pixel)).probs;

    for (int c = 0; c < classes; ++c) {
        switch (strategy) {
            case MaskOutStrategy::InOut: out[c] = p_in[2 * c] - p_out[2 * c]; break;
            case MaskOutStrategy::WholeOut: out[c] = (*p_whole)[2 * c] - p_out[2 * c]; break;
            case MaskOutStrategy::In: out[c] = p_in[2 * c]; break;
        }
    }
    return out;
}

}  // namespace

std::vector<double> contrast_scores_all_classes(const ClassifierModel& model, const Image& image, const Box& box,
                                                MaskOutStrategy strategy, const std::array<double, 3>& mean_pixel) {
    std::vector<double> p_whole;
    if (strategy == MaskOutStrategy::WholeOut) p_whole = forward(model, image).probs;
    return contrast_vector(model, image, box, strategy, mean_pixel, &p_whole);
}

double contrast_score(const ClassifierModel& model, const Image& image, const Box& box, MaskOutStrategy strategy,
                      const std::array<double, 3>& mean_pixel, int class_id) {
    if (class_id < 0 || class_id >= model.num_classes()) throw Error("contrast_score: class index out of range");
    return contrast_scores_all_classes(model, image, box, strategy, mean_pixel)[static_cast<size_t>(class_id)];
}

std::vector<ScoredProposal> normalize_and_fuse(std::vector<ScoredProposal> proposals, double contrast_weight,
                                               double activation_weight, FuseStats* stats) {
    if (proposals.empty()) throw Error("normalize_and_fuse: empty proposal pool");
    if (contrast_weight < 0 || activation_weight < 0 || contrast_weight + activation_weight <= 0)
        throw ConfigError("normalize_and_fuse: bad fusion weights");

    auto normalize_channel = [&](auto get, auto set) -> bool {
        double lo = get(proposals.front()), hi = lo;
        for (const auto& p : proposals) {
            lo = std::min(lo, get(p));
            hi = std::max(hi, get(p));
        }
        if (hi == lo) {
            for (auto& p : proposals) set(p, 0.5);
            return true;  // degenerate channel
        }
        for (auto& p : proposals) set(p, (get(p) - lo) / (hi - lo));
        return false;
    };
    bool cd = normalize_channel([](const ScoredProposal& p) { return p.contrast; },
                                [](ScoredProposal& p, double v) { p.contrast = v; });
    bool ad = normalize_channel([](const ScoredProposal& p) { return p.activation; },
                                [](ScoredProposal& p, double v) { p.activation = v; });
    if (stats) {
        stats->contrast_degenerate = cd;
        stats->activation_degenerate = ad;
    }

    const double wsum = contrast_weight + activation_weight;
    for (auto& p : proposals) p.fused = (contrast_weight * p.contrast + activation_weight * p.activation) / wsum;

    std::sort(proposals.begin(), proposals.end(), [](const ScoredProposal& a, const ScoredProposal& b) {
        if (a.fused != b.fused) return a.fused > b.fused;
        if (a.contrast != b.contrast) return a.contrast > b.contrast;
        return a.index < b.index;
    });
    return proposals;
}

std::vector<ScoredProposal> top_m_select(const std::vector<ScoredProposal>& ranked, int m) {
    if (m < 1) throw Error("top_m_select: M must be >= 1");
    std::vector<ScoredProposal> sorted = ranked;
    std::sort(sorted.begin(), sorted.end(), [](const ScoredProposal& a, const ScoredProposal& b) {
        if (a.fused != b.fused) return a.fused > b.fused;
        if (a.contrast != b.contrast) return a.contrast > b.contrast;
        return a.index < b.index;
    });
    if (static_cast<int>(sorted.size()) > m) sorted.resize(static_cast<size_t>(m));
    return sorted;
}

std::vector<RawImageScores> score_image_proposals_multi(const ClassifierModel& model, const LabeledImage& image,
                                                        const std::vector<Proposal>& proposals,
                                                        const std::vector<MaskOutStrategy>& strategies,
                                                        const std::array<double, 3>& mean_pixel, double alpha) {
    if (strategies.empty()) throw Error("score_image_proposals: no strategies");
    std::vector<RawImageScores> out(strategies.size());
    for (auto& raw : out) raw.image_id = image.id;
    std::vector<int> classes;
    for (int c = 0; c < static_cast<int>(image.labels.size()); ++c)
        if (image.positive_for(c)) classes.push_back(c);
    if (classes.empty()) return out;

    bool need_crop = false, need_maskout = false;
    for (MaskOutStrategy s : strategies) {
        need_crop |= s != MaskOutStrategy::WholeOut;
        need_maskout |= s != MaskOutStrategy::In;
    }

    // One trunk pass serves the whole-image probabilities and every CAM.
    ForwardResult whole = forward(model, image.pixels);
    std::vector<ActivationMap> cams;
    cams.reserve(classes.size());
    for (int c : classes)
        cams.push_back(class_activation_map(model, whole.features, image.pixels.width, image.pixels.height, c));

    for (auto& raw : out) {
        raw.classes = classes;
        raw.contrast.assign(classes.size(), {});
        raw.activation.assign(classes.size(), {});
    }

    for (const auto& prop : proposals) {
        Box clipped = clip_box(prop.box, image.pixels.width, image.pixels.height);
        if (clipped.width() < 2 || clipped.height() < 2) continue;  // unscorable, drop from the pool

        std::vector<double> p_in, p_out;
        if (need_crop) p_in = forward(model, crop(image.pixels, clipped)).probs;
        if (need_maskout) p_out = forward(model, mask_out(image.pixels, clipped, mean_pixel)).probs;

        std::vector<double> act(classes.size());
        for (size_t ci = 0; ci < classes.size(); ++ci) act[ci] = activation_score(cams[ci], clipped, alpha);

        for (size_t si = 0; si < strategies.size(); ++si) {
            out[si].boxes.push_back(clipped);
            for (size_t ci = 0; ci < classes.size(); ++ci) {
                int c = classes[ci];
                double contrast = 0.0;
                switch (strategies[si]) {
                    case MaskOutStrategy::InOut: contrast = p_in[2 * c] - p_out[2 * c]; break;
                    case MaskOutStrategy::WholeOut: contrast = whole.probs[2 * c] - p_out[2 * c]; break;
                    case MaskOutStrategy::In: contrast = p_in[2 * c]; break;
                }
                out[si].contrast[ci].push_back(contrast);
                out[si].activation[ci].push_back(act[ci]);
            }
        }
    }
    return out;
}

RawImageScores score_image_proposals(const ClassifierModel& model, const LabeledImage& image,
                                     const std::vector<Proposal>& proposals, MaskOutStrategy strategy,
                                     const std::array<double, 3>& mean_pixel, double alpha) {
    return score_image_proposals_multi(model, image, proposals, {strategy}, mean_pixel, alpha).front();
}

std::map<int, std::vector<ScoredProposal>> rank_image(const RawImageScores& raw, double contrast_weight,
                                                      double activation_weight, int top_m) {
    std::map<int, std::vector<ScoredProposal>> out;
    if (raw.boxes.empty()) return out;
    for (size_t ci = 0; ci < raw.classes.size(); ++ci) {
        std::vector<ScoredProposal> pool(raw.boxes.size());
        for (size_t i = 0; i < raw.boxes.size(); ++i) {
            pool[i].box = raw.boxes[i];
            pool[i].contrast = raw.contrast[ci][i];
            pool[i].activation = raw.activation[ci][i];
            pool[i].class_id = raw.classes[ci];
            pool[i].index = static_cast<int>(i);
        }
        out[raw.classes[ci]] = top_m_select(normalize_and_fuse(std::move(pool), contrast_weight, activation_weight),
                                            top_m);
    }
    return out;
}

MinedSet mine_dataset(const ClassifierModel& model, const Dataset& dataset, const ProposalSet& proposals,
                      const std::array<double, 3>& mean_pixel, const MiningConfig& config) {
    if (config.top_m < 1) throw ConfigError("mining: top_m must be >= 1");
    std::vector<std::map<int, std::vector<ScoredProposal>>> per_image(dataset.images.size());
    parallel_for(dataset.images.size(), config.threads, [&](size_t i) {
        const LabeledImage& img = dataset.images[i];
        auto it = proposals.find(img.id);
        if (it == proposals.end() || it->second.empty()) return;
        RawImageScores raw =
            score_image_proposals(model, img, it->second, config.strategy, mean_pixel, config.alpha);
        per_image[i] = rank_image(raw, config.contrast_weight, config.activation_weight, config.top_m);
    });
    MinedSet mined;
    for (size_t i = 0; i < dataset.images.size(); ++i)
        if (!per_image[i].empty()) mined[dataset.images[i].id] = std::move(per_image[i]);
    return mined;
}

void save_mined(const std::string& path, const MinedSet& mined) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write mined proposals: " + path);
    for (const auto& [image_id, per_class] : mined)
        for (const auto& [class_id, list] : per_class)
            for (size_t rank = 0; rank < list.size(); ++rank) {
                const auto& p = list[rank];
                out << image_id << "," << class_id << "," << p.box.x1 << "," << p.box.y1 << "," << p.box.x2 << ","
                    << p.box.y2 << "," << format_double(p.contrast) << "," << format_double(p.activation) << ","
                    << format_double(p.fused) << "," << rank << "\n";
            }
}

MinedSet load_mined(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("mined proposals not found: " + path);
    MinedSet mined;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 10) throw ParseError(path, line_no, "expected 10 fields");
        try {
            ScoredProposal p;
            int class_id = std::stoi(fields[1]);
            p.box = Box{std::stoi(fields[2]), std::stoi(fields[3]), std::stoi(fields[4]), std::stoi(fields[5])};
            p.contrast = std::stod(fields[6]);
            p.activation = std::stod(fields[7]);
            p.fused = std::stod(fields[8]);
            p.class_id = class_id;
            auto& list = mined[fields[0]][class_id];
            size_t rank = static_cast<size_t>(std::stoul(fields[9]));
            if (rank != list.size()) throw ParseError(path, line_no, "rank out of order");
            p.index = static_cast<int>(rank);
            list.push_back(p);
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception&) {
            throw ParseError(path, line_no, "malformed mined proposal row");
        }
    }
    return mined;
}

}  // namespace wsol
