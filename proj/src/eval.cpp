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

#include "wsol/eval.hpp"

#include <algorithm>
#include <cmath>

#include "wsol/common.hpp"

namespace wsol {

namespace {

bool image_positive(const LabeledImage& img, int class_id) {
    return class_id >= 0 && class_id < static_cast<int>(img.labels.size()) && img.labels[class_id] != 0;
}

std::vector<const Box*> class_gt_boxes(const LabeledImage& img, int class_id) {
    std::vector<const Box*> out;
    for (const auto& g : img.gt_boxes)
        if (g.class_id == class_id) out.push_back(&g.box);
    return out;
}

/// Stable score-descending order (ties keep input order).
std::vector<int> score_order(const std::vector<Detection>& detections) {
    std::vector<int> order(detections.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return detections[a].score > detections[b].score; });
    return order;
}

}  // namespace

double corloc(const std::map<std::string, Box>& localizations, const Dataset& gt, int class_id, double iou_threshold,
              int* ignored_predictions) {
    if (class_id < 0 || class_id >= gt.num_classes) throw Error("corloc: class index out of range");
    if (ignored_predictions) *ignored_predictions = 0;
    int positives = 0, hits = 0;
    for (const auto& img : gt.images) {
        if (!image_positive(img, class_id)) continue;
        ++positives;
        auto it = localizations.find(img.id);
        if (it == localizations.end()) continue;
        for (const Box* g : class_gt_boxes(img, class_id))
            if (iou(it->second, *g) >= iou_threshold) {
                ++hits;
                break;
            }
    }
    if (ignored_predictions)
        for (const auto& [id, box] : localizations) {
            const LabeledImage* img = gt.find(id);
            if (!img || !image_positive(*img, class_id)) ++(*ignored_predictions);
        }
    if (positives == 0) return 0.0;
    return static_cast<double>(hits) / positives;
}

double corloc_at_m(const std::map<std::string, std::vector<Box>>& ranked, const Dataset& gt, int class_id, int m,
                   double t) {
    if (m < 1) throw Error("corloc_at_m: M must be >= 1");
    if (class_id < 0 || class_id >= gt.num_classes) throw Error("corloc_at_m: class index out of range");
    int positives = 0, hits = 0;
    for (const auto& img : gt.images) {
        if (!image_positive(img, class_id)) continue;
        ++positives;
        auto it = ranked.find(img.id);
        if (it == ranked.end()) continue;
        auto gt_boxes = class_gt_boxes(img, class_id);
        int top = std::min<int>(m, static_cast<int>(it->second.size()));
        bool hit = false;
        for (int i = 0; i < top && !hit; ++i)
            for (const Box* g : gt_boxes)
                if (iou(it->second[i], *g) >= t) {
                    hit = true;
                    break;
                }
        if (hit) ++hits;
    }
    if (positives == 0) return 0.0;
    return static_cast<double>(hits) / positives;
}

double recall_at_m(const std::map<std::string, std::vector<Box>>& ranked, const Dataset& gt, int class_id, int m,
                   double t) {
    if (m < 1) throw Error("recall_at_m: M must be >= 1");
    if (class_id < 0 || class_id >= gt.num_classes) throw Error("recall_at_m: class index out of range");
    long long total_gt = 0, matched = 0;
    for (const auto& img : gt.images) {
        auto gt_boxes = class_gt_boxes(img, class_id);
        total_gt += static_cast<long long>(gt_boxes.size());
        if (gt_boxes.empty()) continue;
        auto it = ranked.find(img.id);
        if (it == ranked.end()) continue;
        int top = std::min<int>(m, static_cast<int>(it->second.size()));

        // greedy one-to-one matching, highest IoU first
        struct Pair {
            double overlap;
            int proposal, gt_index;
        };
        std::vector<Pair> pairs;
        for (int i = 0; i < top; ++i)
            for (size_t j = 0; j < gt_boxes.size(); ++j) {
                double v = iou(it->second[i], *gt_boxes[j]);
                if (v >= t) pairs.push_back(Pair{v, i, static_cast<int>(j)});
            }
        std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
            if (a.overlap != b.overlap) return a.overlap > b.overlap;
            if (a.proposal != b.proposal) return a.proposal < b.proposal;
            return a.gt_index < b.gt_index;
        });
        std::vector<uint8_t> used_prop(static_cast<size_t>(top), 0), used_gt(gt_boxes.size(), 0);
        for (const auto& p : pairs) {
            if (used_prop[p.proposal] || used_gt[p.gt_index]) continue;
            used_prop[p.proposal] = 1;
            used_gt[p.gt_index] = 1;
            ++matched;
        }
    }
    if (total_gt == 0) return 0.0;
    return static_cast<double>(matched) / static_cast<double>(total_gt);
}

std::optional<double> average_precision(const std::vector<Detection>& detections, const Dataset& gt, int class_id,
                                        double iou_threshold, ApInterpolation interp,
                                        std::vector<std::pair<double, double>>* pr_curve) {
    if (class_id < 0 || class_id >= gt.num_classes) throw Error("average_precision: class index out of range");
    long long total_gt = 0;
    std::map<std::string, std::vector<uint8_t>> claimed;  // per image, per class-gt box
    for (const auto& img : gt.images) {
        size_t n = class_gt_boxes(img, class_id).size();
        total_gt += static_cast<long long>(n);
        if (n) claimed[img.id].assign(n, 0);
    }
    if (total_gt == 0) return std::nullopt;

    std::vector<Detection> dets;
    for (const auto& d : detections)
        if (d.class_id == class_id) dets.push_back(d);
    std::vector<int> order = score_order(dets);

    if (pr_curve) pr_curve->clear();
    std::vector<std::pair<double, double>> curve;  // (recall, precision)
    long long tp = 0, fp = 0;
    for (int idx : order) {
        const Detection& d = dets[static_cast<size_t>(idx)];
        const LabeledImage* img = gt.find(d.image_id);
        bool matched = false;
        if (img) {
            auto gt_boxes = class_gt_boxes(*img, class_id);
            auto& flags = claimed[img->id];
            double best = 0.0;
            int best_j = -1;
            for (size_t j = 0; j < gt_boxes.size(); ++j) {
                if (flags[j]) continue;  // duplicate hits on a claimed gt are FP
                double v = iou(d.box, *gt_boxes[j]);
                if (v >= iou_threshold && v > best) {
                    best = v;
                    best_j = static_cast<int>(j);
                }
            }
            if (best_j >= 0) {
                flags[static_cast<size_t>(best_j)] = 1;
                matched = true;
            }
        }
        matched ? ++tp : ++fp;
        curve.emplace_back(static_cast<double>(tp) / total_gt, static_cast<double>(tp) / (tp + fp));
    }
    if (pr_curve) *pr_curve = curve;

    if (interp == ApInterpolation::ElevenPoint) {
        double sum = 0.0;
        for (int i = 0; i <= 10; ++i) {
            double r = i / 10.0;
            double best = 0.0;
            for (const auto& [rec, prec] : curve)
                if (rec >= r - 1e-12) best = std::max(best, prec);
            sum += best;
        }
        return sum / 11.0;
    }

    // all-points: integrate the precision envelope over recall
    double ap = 0.0;
    double prev_recall = 0.0;
    for (size_t i = 0; i < curve.size(); ++i) {
        double recall = curve[i].first;
        if (recall <= prev_recall) continue;
        double envelope = 0.0;
        for (size_t j = i; j < curve.size(); ++j) envelope = std::max(envelope, curve[j].second);
        ap += (recall - prev_recall) * envelope;
        prev_recall = recall;
    }
    return ap;
}

double mean_ap(const std::vector<Detection>& detections, const Dataset& gt, double iou_threshold,
               ApInterpolation interp, int* skipped_classes) {
    double sum = 0.0;
    int counted = 0, skipped = 0;
    for (int c = 0; c < gt.num_classes; ++c) {
        auto ap = average_precision(detections, gt, c, iou_threshold, interp);
        if (ap.has_value()) {
            sum += *ap;
            ++counted;
        } else {
            ++skipped;
        }
    }
    if (skipped_classes) *skipped_classes = skipped;
    return counted ? sum / counted : 0.0;
}

long long ErrorBreakdown::total() const {
    long long n = 0;
    for (const auto& row : per_class)
        for (long long v : row) n += v;
    return n;
}

ErrorBreakdown error_analysis(const std::vector<Detection>& detections, const Dataset& gt, const EvalConfig& config) {
    ErrorBreakdown out;
    out.per_class.assign(static_cast<size_t>(gt.num_classes), {0, 0, 0, 0, 0});

    // classes absent from every group form implicit singletons
    std::vector<int> group_of(static_cast<size_t>(gt.num_classes), -1);
    for (size_t g = 0; g < config.similar_groups.size(); ++g)
        for (int c : config.similar_groups[g])
            if (c >= 0 && c < gt.num_classes) group_of[static_cast<size_t>(c)] = static_cast<int>(g);

    std::map<std::string, std::map<int, std::vector<uint8_t>>> claimed;
    for (const auto& img : gt.images)
        for (const auto& g : img.gt_boxes) claimed[img.id][g.class_id].push_back(0);

    std::vector<int> order = score_order(detections);
    for (int idx : order) {
        const Detection& d = detections[static_cast<size_t>(idx)];
        if (d.class_id < 0 || d.class_id >= gt.num_classes) throw Error("error_analysis: class index out of range");
        const LabeledImage* img = gt.find(d.image_id);
        auto& row = out.per_class[static_cast<size_t>(d.class_id)];
        if (!img) {
            ++row[ErrorBreakdown::BG];
            continue;
        }

        // TP check mirrors the AP matcher: best unclaimed same-class gt
        auto same_gt = class_gt_boxes(*img, d.class_id);
        auto& flags = claimed[img->id][d.class_id];
        double best = 0.0;
        int best_j = -1;
        double same_best = 0.0, sim_best = 0.0, oth_best = 0.0;
        for (size_t j = 0; j < same_gt.size(); ++j) {
            double v = iou(d.box, *same_gt[j]);
            same_best = std::max(same_best, v);
            if (!flags[j] && v >= config.iou_threshold && v > best) {
                best = v;
                best_j = static_cast<int>(j);
            }
        }
        for (const auto& g : img->gt_boxes) {
            if (g.class_id == d.class_id) continue;
            double v = iou(d.box, g.box);
            if (group_of[static_cast<size_t>(g.class_id)] >= 0 &&
                group_of[static_cast<size_t>(g.class_id)] == group_of[static_cast<size_t>(d.class_id)])
                sim_best = std::max(sim_best, v);
            else
                oth_best = std::max(oth_best, v);
        }
        if (best_j >= 0) {
            flags[static_cast<size_t>(best_j)] = 1;
            ++row[ErrorBreakdown::Cor];
        } else if (same_best >= config.dash_threshold) {
            ++row[ErrorBreakdown::Loc];
        } else if (sim_best >= config.dash_threshold) {
            ++row[ErrorBreakdown::Sim];
        } else if (oth_best >= config.dash_threshold) {
            ++row[ErrorBreakdown::Oth];
        } else {
            ++row[ErrorBreakdown::BG];
        }
    }
    return out;
}

}  // namespace wsol
