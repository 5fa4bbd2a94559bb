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

#include <string>
#include <utility>
#include <vector>

#include "wsol/classifier.hpp"
#include "wsol/dataset.hpp"
#include "wsol/mining.hpp"

namespace wsol {

/// Quadratically smoothed hinge: 0.5-z for z<=0, (1-z)^2/2 for 0<z<1,
/// 0 for z>=1. Returns (loss, derivative); continuously differentiable.
std::pair<double, double> smoothed_hinge(double margin);

struct BagInstance {
    Box box;
    std::vector<double> features;
    double mining_score = 0.0;  // fused mining score, drives initialization
};

/// One image's candidate set for one class. Positive bags (y_c=1) must
/// contain at least one true instance; negative bags (y_c=0) contain none.
struct Bag {
    std::string image_id;
    int class_id = 0;
    bool positive = false;
    std::vector<BagInstance> instances;
};

/// Latent z over a bag's instances: positives select >= 1, negatives 0.
struct LatentSelection {
    std::vector<uint8_t> z;
    int selected_count() const;
};

struct MilConfig {
    double lambda = 1e-3;  // penalty is ||w||^2 / (2*lambda); larger = weaker
    int t_outer = 10;
    int t_inner = 20;          // SGD epochs per fit
    double learning_rate = 0.1;
    uint64_t seed = 1;
};

struct MilClassifier {
    std::vector<double> weights;
    double bias = 0.0;
    MilConfig cfg;

    double score(const std::vector<double>& features) const;
};

/// Mean smoothed-hinge risk over the given instances plus ||w||^2/(2*lambda).
/// This exact form is what mil_train minimizes and what the brute-force
/// oracle re-evaluates.
double regularized_hinge_risk(const std::vector<double>& weights, double bias,
                              const std::vector<const std::vector<double>*>& positives,
                              const std::vector<const std::vector<double>*>& negatives, double lambda);

struct MilResult {
    MilClassifier classifier;
    std::vector<LatentSelection> selections;  // parallel to the input bags
    std::vector<double> objective_history;    // one entry per outer iteration
    bool converged = false;
};

/// Alternating optimization: select the best instance per positive bag
/// (mining score at initialization, classifier score afterwards), then fit
/// the linear classifier on selected positives vs all negative instances.
/// The recorded objective is non-increasing across outer iterations.
MilResult mil_train(const std::vector<Bag>& bags, const MilConfig& cfg);

struct SelectedInstance {
    int class_id = 0;
    std::string image_id;
    Box box;
    double score = 0.0;
};

/// All instances of positive bags scoring >= tau; the per-bag argmax is
/// always included so every positive bag stays represented.
std::vector<SelectedInstance> select_instances(const MilClassifier& classifier, const std::vector<Bag>& bags,
                                               double tau);

/// ROI average pooling of the last-conv maps over the mapped box,
/// concatenated with (w/W, h/H, cx/W, cy/H). Dimension is K+4.
std::vector<double> extract_instance_features(const ClassifierModel& model, const FeatureMapStack& features,
                                              int image_width, int image_height, const Box& box);
std::vector<double> extract_instance_features(const ClassifierModel& model, const Image& image, const Box& box);

/// Bags for one class from the mined proposals: positive bags are the B_c
/// of images with y_c=1; negative instances come from the mined proposals
/// of images with y_c=0, capped to the highest-fused negative_cap.
std::vector<Bag> build_bags_for_class(const ClassifierModel& model, const Dataset& dataset, const MinedSet& mined,
                                      int class_id, int negative_cap);

// CSV: class,image_id,x1,y1,x2,y2,score
void save_selected(const std::string& path, const std::vector<SelectedInstance>& selected);
std::vector<SelectedInstance> load_selected(const std::string& path);

}  // namespace wsol
