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

#include "wsol/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "wsol/common.hpp"
#include "wsol/rng.hpp"

namespace wsol {

std::pair<double, double> smooth_l1(double x) {
    double ax = std::abs(x);
    if (ax < 1.0) return {0.5 * x * x, x};
    return {ax - 0.5, x > 0 ? 1.0 : -1.0};
}

std::array<double, 4> encode_box_targets(const Box& proposal, const Box& target) {
    if (!proposal.valid() || !target.valid()) throw Error("encode_box_targets: degenerate box");
    double pw = proposal.width(), ph = proposal.height();
    return {(target.cx() - proposal.cx()) / pw, (target.cy() - proposal.cy()) / ph,
            std::log(target.width() / pw), std::log(target.height() / ph)};
}

std::array<double, 4> decode_box_coords(const Box& proposal, const std::array<double, 4>& t) {
    double pw = proposal.width(), ph = proposal.height();
    double cx = proposal.cx() + t[0] * pw;
    double cy = proposal.cy() + t[1] * ph;
    double w = pw * std::exp(t[2]);
    double h = ph * std::exp(t[3]);
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

Box decode_box(const Box& proposal, const std::array<double, 4>& targets, int image_w, int image_h) {
    auto c = decode_box_coords(proposal, targets);
    Box b{static_cast<int>(std::lround(c[0])), static_cast<int>(std::lround(c[1])),
          static_cast<int>(std::lround(c[2])), static_cast<int>(std::lround(c[3]))};
    b = clip_box(b, image_w, image_h);
    // keep at least one pixel inside the image
    if (b.x2 <= b.x1) {
        b.x1 = std::clamp(b.x1, 0, image_w - 1);
        b.x2 = b.x1 + 1;
    }
    if (b.y2 <= b.y1) {
        b.y1 = std::clamp(b.y1, 0, image_h - 1);
        b.y2 = b.y1 + 1;
    }
    return b;
}

std::vector<RoiSample> build_roi_set(const ProposalSet& proposals, const TrainingBoxes& mined_boxes, double fg_iou,
                                     double bg_lo) {
    if (!(bg_lo >= 0.0 && bg_lo < fg_iou && fg_iou <= 1.0)) throw ConfigError("build_roi_set: bad IoU bands");
    std::vector<RoiSample> out;
    for (const auto& [image_id, props] : proposals) {
        auto it = mined_boxes.find(image_id);
        if (it == mined_boxes.end() || it->second.empty()) continue;
        const auto& mined = it->second;
        for (const auto& prop : props) {
            double best = 0.0;
            const TrainingBox* match = nullptr;
            for (const auto& tb : mined) {
                double v = iou(prop.box, tb.box);
                if (v > best) {
                    best = v;
                    match = &tb;
                }
            }
            if (best >= fg_iou) {
                RoiSample s;
                s.image_id = image_id;
                s.box = prop.box;
                s.label = match->class_id + 1;
                s.targets = encode_box_targets(prop.box, match->box);
                out.push_back(std::move(s));
            } else if (best >= bg_lo) {
                RoiSample s;
                s.image_id = image_id;
                s.box = prop.box;
                s.label = 0;
                out.push_back(std::move(s));
            }
            // below bg_lo: discarded
        }
    }
    return out;
}

void extract_roi_features(std::vector<RoiSample>& samples, const ClassifierModel& model, const Dataset& dataset) {
    std::string current_id;
    FeatureMapStack features;
    int img_w = 0, img_h = 0;
    for (auto& s : samples) {
        if (s.image_id != current_id) {
            const LabeledImage& img = dataset.require(s.image_id);
            features = feature_maps(model, img.pixels);
            img_w = img.pixels.width;
            img_h = img.pixels.height;
            current_id = s.image_id;
        }
        s.features = extract_instance_features(model, features, img_w, img_h, s.box);
    }
}

namespace {

std::vector<double> softmax(const std::vector<double>& z) {
    double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double sum = 0.0;
    for (size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

std::vector<double> head_logits(const DetectorModel& model, const std::vector<double>& x) {
    const int heads = model.cfg.num_classes + 1;
    const size_t d = x.size();
    std::vector<double> z(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        double v = model.cls_b[h];
        const double* w = model.cls_w.data() + static_cast<size_t>(h) * d;
        for (size_t i = 0; i < d; ++i) v += w[i] * x[i];
        z[h] = v;
    }
    return z;
}

std::array<double, 4> regression_prediction(const DetectorModel& model, int class_id, const std::vector<double>& x) {
    const size_t d = x.size();
    std::array<double, 4> t{};
    for (int j = 0; j < 4; ++j) {
        const double* w = model.reg_w.data() + (static_cast<size_t>(class_id) * 4 + j) * d;
        double v = model.reg_b[static_cast<size_t>(class_id) * 4 + j];
        for (size_t i = 0; i < d; ++i) v += w[i] * x[i];
        t[j] = v;
    }
    return t;
}

}  // namespace

DetectorModel train_detector(const std::vector<RoiSample>& roi_set, const DetectorConfig& cfg_in,
                             DetectorTrainStats* stats) {
    DetectorConfig cfg = cfg_in;
    if (cfg.num_classes < 1) throw ConfigError("detector: num_classes must be >= 1");
    if (roi_set.empty()) throw Error("train_detector: empty ROI set");
    size_t dim = roi_set.front().features.size();
    if (dim == 0) throw Error("train_detector: samples carry no features");
    for (const auto& s : roi_set)
        if (s.features.size() != dim) throw Error("train_detector: feature dimension mismatch");
    cfg.feature_dim = static_cast<int>(dim);

    std::vector<int> fg_pool, bg_pool;
    std::set<int> present;
    for (size_t i = 0; i < roi_set.size(); ++i) {
        if (roi_set[i].label > 0) {
            fg_pool.push_back(static_cast<int>(i));
            present.insert(roi_set[i].label - 1);
        } else {
            bg_pool.push_back(static_cast<int>(i));
        }
    }
    if (fg_pool.empty() || bg_pool.empty())
        throw Error("train_detector: need at least one foreground and one background sample");
    if (stats)
        for (int c = 0; c < cfg.num_classes; ++c)
            if (!present.count(c)) stats->warnings.push_back("class " + std::to_string(c) + " absent from ROI set");

    const int heads = cfg.num_classes + 1;
    DetectorModel model;
    model.cfg = cfg;
    model.cls_w.resize(static_cast<size_t>(heads) * dim);
    model.cls_b.assign(static_cast<size_t>(heads), 0.0);
    model.reg_w.assign(static_cast<size_t>(cfg.num_classes) * 4 * dim, 0.0);
    model.reg_b.assign(static_cast<size_t>(cfg.num_classes) * 4, 0.0);
    Rng rng(cfg.seed ^ 0xde7ec7);
    for (double& v : model.cls_w) v = rng.uniform(-0.05, 0.05);
    // regression weights start at zero: identity offsets until trained
    model.initialized = true;

    std::vector<double> d_cls_w(model.cls_w.size());
    std::vector<double> d_cls_b(model.cls_b.size());
    std::vector<double> d_reg_w(model.reg_w.size());
    std::vector<double> d_reg_b(model.reg_b.size());

    const int n_fg = std::max(1, static_cast<int>(std::lround(cfg.batch_size * cfg.fg_fraction)));
    const int n_bg = std::max(1, cfg.batch_size - n_fg);

    // step size in logit units: divide by the mean squared feature norm so
    // the configured rate works for any feature scale
    double mean_sq_norm = 0.0;
    for (const auto& s : roi_set) {
        double sq = 0.0;
        for (double v : s.features) sq += v * v;
        mean_sq_norm += sq;
    }
    mean_sq_norm /= static_cast<double>(roi_set.size());
    const double lr = cfg.learning_rate / std::max(1.0, mean_sq_norm);

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::fill(d_cls_w.begin(), d_cls_w.end(), 0.0);
        std::fill(d_cls_b.begin(), d_cls_b.end(), 0.0);
        if (cfg.lambda_reg != 0.0) {
            std::fill(d_reg_w.begin(), d_reg_w.end(), 0.0);
            std::fill(d_reg_b.begin(), d_reg_b.end(), 0.0);
        }

        std::vector<int> batch;
        for (int i = 0; i < n_fg; ++i) batch.push_back(fg_pool[rng.uniform_int(static_cast<int>(fg_pool.size()))]);
        for (int i = 0; i < n_bg; ++i) batch.push_back(bg_pool[rng.uniform_int(static_cast<int>(bg_pool.size()))]);

        double loss = 0.0;
        for (int si : batch) {
            const RoiSample& s = roi_set[static_cast<size_t>(si)];
            const auto& x = s.features;
            std::vector<double> p = softmax(head_logits(model, x));
            loss += -std::log(std::max(p[static_cast<size_t>(s.label)], 1e-12)) / batch.size();
            for (int h = 0; h < heads; ++h) {
                double dz = (p[h] - (h == s.label ? 1.0 : 0.0)) / batch.size();
                d_cls_b[h] += dz;
                double* dw = d_cls_w.data() + static_cast<size_t>(h) * dim;
                for (size_t i = 0; i < dim; ++i) dw[i] += dz * x[i];
            }
            if (s.label > 0 && cfg.lambda_reg != 0.0) {
                // normalized by the full batch (not the foreground count) so
                // the regression step size matches the classification head
                int c = s.label - 1;
                std::array<double, 4> pred = regression_prediction(model, c, x);
                for (int j = 0; j < 4; ++j) {
                    auto [l, dl] = smooth_l1(pred[j] - s.targets[j]);
                    loss += cfg.lambda_reg * l / batch.size();
                    double dz = cfg.lambda_reg * dl / batch.size();
                    d_reg_b[static_cast<size_t>(c) * 4 + j] += dz;
                    double* dw = d_reg_w.data() + (static_cast<size_t>(c) * 4 + j) * dim;
                    for (size_t i = 0; i < dim; ++i) dw[i] += dz * x[i];
                }
            }
        }
        if (!std::isfinite(loss)) throw TrainingError("train_detector: loss diverged at iteration " + std::to_string(iter));
        if (stats) stats->loss_history.push_back(loss);

        for (size_t i = 0; i < model.cls_w.size(); ++i) model.cls_w[i] -= lr * d_cls_w[i];
        for (size_t i = 0; i < model.cls_b.size(); ++i) model.cls_b[i] -= lr * d_cls_b[i];
        if (cfg.lambda_reg != 0.0) {
            for (size_t i = 0; i < model.reg_w.size(); ++i) model.reg_w[i] -= lr * d_reg_w[i];
            for (size_t i = 0; i < model.reg_b.size(); ++i) model.reg_b[i] -= lr * d_reg_b[i];
        }
    }
    return model;
}

std::vector<double> detector_scores(const DetectorModel& model, const std::vector<double>& features) {
    if (!model.initialized) throw Error("detector: model not initialized");
    return softmax(head_logits(model, features));
}

std::vector<int> greedy_nms(const std::vector<ScoredBox>& boxes, double iou_threshold) {
    std::vector<int> order(boxes.size());
    for (size_t i = 0; i < boxes.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (boxes[a].score != boxes[b].score) return boxes[a].score > boxes[b].score;
        return boxes[a].index < boxes[b].index;
    });
    std::vector<int> kept;
    for (int i : order) {
        bool suppressed = false;
        for (int j : kept)
            if (iou(boxes[i].box, boxes[j].box) >= iou_threshold) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(i);
    }
    return kept;
}

std::vector<Detection> detect_from_features(const DetectorModel& model, const std::string& image_id,
                                            const std::vector<Box>& boxes,
                                            const std::vector<std::vector<double>>& features, int image_w,
                                            int image_h, double score_threshold, double nms_iou) {
    if (boxes.size() != features.size()) throw Error("detect: boxes/features size mismatch");
    std::vector<Detection> out;
    for (int c = 0; c < model.cfg.num_classes; ++c) {
        std::vector<ScoredBox> candidates;
        for (size_t i = 0; i < boxes.size(); ++i) {
            double score = detector_scores(model, features[i])[static_cast<size_t>(c) + 1];
            if (score < score_threshold) continue;
            Box refined = decode_box(boxes[i], regression_prediction(model, c, features[i]), image_w, image_h);
            candidates.push_back(ScoredBox{refined, score, static_cast<int>(i)});
        }
        for (int idx : greedy_nms(candidates, nms_iou))
            out.push_back(Detection{image_id, candidates[static_cast<size_t>(idx)].box, c,
                                    candidates[static_cast<size_t>(idx)].score});
    }
    std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.class_id != b.class_id) return a.class_id < b.class_id;
        return a.box.x1 < b.box.x1;
    });
    return out;
}

std::vector<Detection> detect(const DetectorModel& model, const ClassifierModel& feature_model,
                              const LabeledImage& image, const std::vector<Proposal>& proposals,
                              double score_threshold, double nms_iou) {
    FeatureMapStack maps = feature_maps(feature_model, image.pixels);
    std::vector<Box> boxes;
    std::vector<std::vector<double>> features;
    for (const auto& p : proposals) {
        Box b = clip_box(p.box, image.pixels.width, image.pixels.height);
        if (!b.valid()) continue;
        boxes.push_back(b);
        features.push_back(
            extract_instance_features(feature_model, maps, image.pixels.width, image.pixels.height, b));
    }
    return detect_from_features(model, image.id, boxes, features, image.pixels.width, image.pixels.height,
                                score_threshold, nms_iou);
}

void save_detections(const std::string& path, const std::vector<Detection>& detections) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write detections: " + path);
    for (const auto& d : detections)
        out << d.image_id << "," << d.class_id << "," << d.box.x1 << "," << d.box.y1 << "," << d.box.x2 << ","
            << d.box.y2 << "," << format_double(d.score) << "\n";
}

std::vector<Detection> load_detections(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("detections not found: " + path);
    std::vector<Detection> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 7) throw ParseError(path, line_no, "expected 7 fields");
        try {
            Detection d;
            d.image_id = fields[0];
            d.class_id = std::stoi(fields[1]);
            d.box = Box{std::stoi(fields[2]), std::stoi(fields[3]), std::stoi(fields[4]), std::stoi(fields[5])};
            d.score = std::stod(fields[6]);
            out.push_back(std::move(d));
        } catch (const std::exception&) {
            throw ParseError(path, line_no, "malformed detection row");
        }
    }
    return out;
}

namespace {

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_detector(const std::string& path, const DetectorModel& model) {
    if (!model.initialized) throw Error("save_detector: model not initialized");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write detector checkpoint: " + path);
    out.write("WSDM", 4);
    write_u32(out, 1);
    write_u32(out, static_cast<uint32_t>(model.cfg.num_classes));
    write_u32(out, static_cast<uint32_t>(model.cfg.feature_dim));
    for (const auto* blob : {&model.cls_w, &model.cls_b, &model.reg_w, &model.reg_b})
        for (double d : *blob) {
            float f = static_cast<float>(d);
            out.write(reinterpret_cast<const char*>(&f), 4);
        }
    if (!out) throw IoError("failed writing detector checkpoint: " + path);
}

DetectorModel load_detector(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("detector checkpoint not found: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "WSDM", 4) != 0) throw IoError("bad detector checkpoint magic in " + path);
    if (read_u32(in) != 1) throw IoError("unsupported detector checkpoint version in " + path);
    DetectorModel model;
    model.cfg.num_classes = static_cast<int>(read_u32(in));
    model.cfg.feature_dim = static_cast<int>(read_u32(in));
    size_t dim = static_cast<size_t>(model.cfg.feature_dim);
    int heads = model.cfg.num_classes + 1;
    model.cls_w.resize(static_cast<size_t>(heads) * dim);
    model.cls_b.resize(static_cast<size_t>(heads));
    model.reg_w.resize(static_cast<size_t>(model.cfg.num_classes) * 4 * dim);
    model.reg_b.resize(static_cast<size_t>(model.cfg.num_classes) * 4);
    for (auto* blob : {&model.cls_w, &model.cls_b, &model.reg_w, &model.reg_b})
        for (double& d : *blob) {
            float f;
            in.read(reinterpret_cast<char*>(&f), 4);
            d = f;
        }
    if (!in) throw IoError("truncated detector checkpoint: " + path);
    model.initialized = true;
    return model;
}

}  // namespace wsol
