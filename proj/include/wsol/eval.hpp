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

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wsol/dataset.hpp"
#include "wsol/detector.hpp"
#include "wsol/geometry.hpp"

namespace wsol {

enum class ApInterpolation { AllPoints, ElevenPoint };

struct EvalConfig {
    double iou_threshold = 0.5;   // correctness threshold for CorLoc/AP
    double mining_overlap = 0.5;  // t for CorLoc@M / recall@M
    double dash_threshold = 0.1;  // loose overlap band of the error analysis
    ApInterpolation ap_interpolation = ApInterpolation::AllPoints;
    std::vector<std::vector<int>> similar_groups;  // classes confusable with each other
};

/// Fraction of positive images whose predicted box overlaps any same-class
/// gt box with IoU >= threshold (exactly at threshold counts). Predictions
/// for non-positive images are ignored and counted in ignored_predictions.
double corloc(const std::map<std::string, Box>& localizations, const Dataset& gt, int class_id,
              double iou_threshold = 0.5, int* ignored_predictions = nullptr);

/// Fraction of positive images where at least one of the top-M ranked
/// proposals hits a gt box of the class at IoU >= t. M=1 reduces to corloc.
double corloc_at_m(const std::map<std::string, std::vector<Box>>& ranked, const Dataset& gt, int class_id, int m,
                   double t);

/// Fraction of gt boxes of the class matched one-to-one (greedy, highest
/// IoU first) by some top-M proposal at IoU >= t.
double recall_at_m(const std::map<std::string, std::vector<Box>>& ranked, const Dataset& gt, int class_id, int m,
                   double t);

/// VOC-style AP: score-ranked greedy matching to unclaimed gt, precision
/// envelope area (all-points) or 11-point sampling. Returns nullopt when
/// the class has no gt boxes (undefined). pr_curve receives (recall,
/// precision) after each detection.
std::optional<double> average_precision(const std::vector<Detection>& detections, const Dataset& gt, int class_id,
                                        double iou_threshold = 0.5,
                                        ApInterpolation interp = ApInterpolation::AllPoints,
                                        std::vector<std::pair<double, double>>* pr_curve = nullptr);

/// Unweighted mean over classes that have gt boxes; skipped counts the rest.
double mean_ap(const std::vector<Detection>& detections, const Dataset& gt,
               double iou_threshold = 0.5, ApInterpolation interp = ApInterpolation::AllPoints,
               int* skipped_classes = nullptr);

/// Detection outcome categories, mutually exclusive and exhaustive:
/// Cor (true positive), Loc (same-class overlap but not a TP), Sim/Oth
/// (confusion with a similar / any other class), BG (background).
struct ErrorBreakdown {
    enum Category { Cor = 0, Loc = 1, Sim = 2, Oth = 3, BG = 4 };
    std::vector<std::array<long long, 5>> per_class;

    long long count(int class_id, Category cat) const { return per_class[class_id][cat]; }
    long long total() const;
};

ErrorBreakdown error_analysis(const std::vector<Detection>& detections, const Dataset& gt, const EvalConfig& config);

}  // namespace wsol
