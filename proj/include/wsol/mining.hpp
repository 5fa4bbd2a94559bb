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
#include <string>
#include <vector>

#include "wsol/classifier.hpp"
#include "wsol/dataset.hpp"

namespace wsol {

/// How the contrast score contrasts a proposal against the classifier.
///   InOut:    p(crop) - p(mask-out image)
///   WholeOut: p(whole image) - p(mask-out image)
///   In:       p(crop)
enum class MaskOutStrategy { InOut, WholeOut, In };

MaskOutStrategy mask_out_strategy_from_string(const std::string& name);
std::string to_string(MaskOutStrategy s);

/// Copy of the image with the box region replaced by the mean pixel.
Image mask_out(const Image& image, const Box& box, const std::array<double, 3>& mean_pixel);

/// Per-class activation map m_c(x,y) = sum_k w_k^c a_k(x,y) at last-conv
/// resolution, with its (w+1)x(h+1) prefix-sum table. Values are snapped to
/// a dyadic grid (multiples of 2^-20) so that prefix-sum differences equal
/// naive box sums bit-exactly in f64.
struct ActivationMap {
    int width = 0, height = 0;        // map resolution
    int image_width = 0, image_height = 0;
    int class_id = 0;
    std::vector<double> values;        // width*height, row-major
    std::vector<double> integral;      // (width+1)*(height+1)

    double value(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
    double integral_at(int x, int y) const { return integral[static_cast<size_t>(y) * (width + 1) + x]; }
    double total() const { return integral_at(width, height); }
};

ActivationMap class_activation_map(const ClassifierModel& model, const Image& image, int class_id);
ActivationMap class_activation_map(const ClassifierModel& model, const FeatureMapStack& features, int image_width,
                                   int image_height, int class_id);

/// Build a map (quantized values + integral table) from raw values.
ActivationMap activation_map_from_values(int width, int height, int image_width, int image_height,
                                         std::vector<double> values, int class_id = 0);

/// Image-space box mapped to map space: x1,y1 rounded down, x2,y2 rounded
/// up, then clipped (conservative coverage).
Box map_box_to_grid(const Box& image_box, int image_w, int image_h, int map_w, int map_h);

/// Sum of map values over the mapped box via four integral lookups;
/// exactly equals the naive double sum. Empty box after mapping -> 0 with
/// the degenerate flag set.
double box_response(const ActivationMap& map, const Box& image_box, bool* degenerate = nullptr);

/// r/(w*h) + alpha * r/total, with w,h the image-space box dimensions.
/// A zero total map sum leaves the second term 0 and sets the flag.
double activation_score(const ActivationMap& map, const Box& image_box, double alpha = 5.0,
                        bool* degenerate_total = nullptr);

/// Contrast score (per class c) under the given strategy. The crop must be
/// at least 2x2 after clipping.
double contrast_score(const ClassifierModel& model, const Image& image, const Box& box, MaskOutStrategy strategy,
                      const std::array<double, 3>& mean_pixel, int class_id);
std::vector<double> contrast_scores_all_classes(const ClassifierModel& model, const Image& image, const Box& box,
                                                MaskOutStrategy strategy, const std::array<double, 3>& mean_pixel);

struct ScoredProposal {
    Box box;
    double contrast = 0.0;
    double activation = 0.0;
    double fused = 0.0;
    int class_id = 0;
    int index = 0;  // position in the original pool, used as the final tie-breaker
};

struct FuseStats {
    bool contrast_degenerate = false;  // all raw values equal, channel set to 0.5
    bool activation_degenerate = false;
};

/// Per-image per-class min-max normalization of both channels to [0,1],
/// then fused = (wc*contrast + wa*activation)/(wc+wa). Output is sorted by
/// fused desc, ties by contrast desc then index asc.
std::vector<ScoredProposal> normalize_and_fuse(std::vector<ScoredProposal> proposals, double contrast_weight = 10.0,
                                               double activation_weight = 1.0, FuseStats* stats = nullptr);

/// First M of the ranking (all of them if the pool is smaller).
std::vector<ScoredProposal> top_m_select(const std::vector<ScoredProposal>& ranked, int m);

// --- dataset-level mining ----------------------------------------------------

struct MiningConfig {
    MaskOutStrategy strategy = MaskOutStrategy::InOut;
    double alpha = 5.0;             // size prior weight
    double contrast_weight = 10.0;  // contrast : activation fusion ratio
    double activation_weight = 1.0;
    int top_m = 50;
    int threads = 1;
};

/// Raw (unnormalized) score channels for one image; classes holds the
/// class ids mined for this image (those with y_c = 1).
struct RawImageScores {
    std::string image_id;
    std::vector<Box> boxes;
    std::vector<int> classes;
    std::vector<std::vector<double>> contrast;    // [class position][proposal]
    std::vector<std::vector<double>> activation;  // [class position][proposal]
};

RawImageScores score_image_proposals(const ClassifierModel& model, const LabeledImage& image,
                                     const std::vector<Proposal>& proposals, MaskOutStrategy strategy,
                                     const std::array<double, 3>& mean_pixel, double alpha);

/// Score once for several strategies at a time; the crop and mask-out
/// forward passes are shared, which is what makes the strategy-comparison
/// harness affordable. Results align with the strategies argument.
std::vector<RawImageScores> score_image_proposals_multi(const ClassifierModel& model, const LabeledImage& image,
                                                        const std::vector<Proposal>& proposals,
                                                        const std::vector<MaskOutStrategy>& strategies,
                                                        const std::array<double, 3>& mean_pixel, double alpha);

/// image id -> class id -> ranked top-M proposals (the B_c of each image).
using MinedSet = std::map<std::string, std::map<int, std::vector<ScoredProposal>>>;

std::map<int, std::vector<ScoredProposal>> rank_image(const RawImageScores& raw, double contrast_weight,
                                                      double activation_weight, int top_m);

MinedSet mine_dataset(const ClassifierModel& model, const Dataset& dataset, const ProposalSet& proposals,
                      const std::array<double, 3>& mean_pixel, const MiningConfig& config);

// CSV: image_id,class,x1,y1,x2,y2,contrast,activation,fused,rank
void save_mined(const std::string& path, const MinedSet& mined);
MinedSet load_mined(const std::string& path);

}  // namespace wsol
