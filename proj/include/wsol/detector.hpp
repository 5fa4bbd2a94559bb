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
#include "wsol/mil.hpp"

namespace wsol {

/// Smooth L1: 0.5x^2 for |x|<1, |x|-0.5 otherwise. Returns (loss, derivative).
std::pair<double, double> smooth_l1(double x);

/// Mined (refined) pseudo ground truth for detector training.
struct TrainingBox {
    int class_id = 0;
    Box box;
};
using TrainingBoxes = std::map<std::string, std::vector<TrainingBox>>;

/// ROI training sample. label 0 is background, label c+1 is class c.
/// Foreground keeps log/linear regression targets against its matched box.
struct RoiSample {
    std::string image_id;
    Box box;
    int label = 0;
    std::array<double, 4> targets{};
    std::vector<double> features;  // attached by extract_roi_features
};

/// (dx, dy, dw, dh): center offsets relative to the proposal size plus log
/// size ratios. decode(encode(p, t)) recovers t to float precision.
std::array<double, 4> encode_box_targets(const Box& proposal, const Box& target);
std::array<double, 4> decode_box_coords(const Box& proposal, const std::array<double, 4>& targets);  // x1,y1,x2,y2
Box decode_box(const Box& proposal, const std::array<double, 4>& targets, int image_w, int image_h);

/// IoU >= fg_iou against any mined box -> foreground of the best match's
/// class; max IoU in [bg_lo, fg_iou) -> background; below bg_lo -> dropped.
std::vector<RoiSample> build_roi_set(const ProposalSet& proposals, const TrainingBoxes& mined_boxes,
                                     double fg_iou = 0.5, double bg_lo = 0.1);

/// Fill sample.features with the shared extractor (ROI pooling + geometry).
void extract_roi_features(std::vector<RoiSample>& samples, const ClassifierModel& model, const Dataset& dataset);

struct DetectorConfig {
    int num_classes = 2;  // C; the head is (C+1)-way
    int feature_dim = 0;  // set when training
    int iterations = 40000;
    int batch_size = 64;
    double learning_rate = 1.0;  // in logit units; scaled by the feature norm
    double lambda_reg = 1.0;    // weight of the smooth-L1 regression term
    double fg_fraction = 0.25;  // foreground share per mini-batch (1:3 cap)
    uint64_t seed = 1;
};

struct DetectorModel {
    DetectorConfig cfg;
    std::vector<double> cls_w;  // (C+1) x D
    std::vector<double> cls_b;  // C+1
    std::vector<double> reg_w;  // C x 4 x D
    std::vector<double> reg_b;  // C x 4
    bool initialized = false;
};

struct DetectorTrainStats {
    std::vector<double> loss_history;
    std::vector<std::string> warnings;  // e.g. classes absent from the ROI set
};

DetectorModel train_detector(const std::vector<RoiSample>& roi_set, const DetectorConfig& cfg,
                             DetectorTrainStats* stats = nullptr);

/// Softmax over C+1 for one feature vector.
std::vector<double> detector_scores(const DetectorModel& model, const std::vector<double>& features);

struct Detection {
    std::string image_id;
    Box box;
    int class_id = 0;
    double score = 0.0;
};

struct ScoredBox {
    Box box;
    double score = 0.0;
    int index = 0;
};

/// Greedy NMS: highest score first (ties by input index), suppress boxes
/// with IoU >= threshold against any kept box. Returns kept input indices.
std::vector<int> greedy_nms(const std::vector<ScoredBox>& boxes, double iou_threshold);

/// Head-only inference on prepared features; detect() wraps it with the
/// shared extractor. Per class: score, apply regression, threshold, NMS.
std::vector<Detection> detect_from_features(const DetectorModel& model, const std::string& image_id,
                                            const std::vector<Box>& boxes,
                                            const std::vector<std::vector<double>>& features, int image_w,
                                            int image_h, double score_threshold, double nms_iou);

std::vector<Detection> detect(const DetectorModel& model, const ClassifierModel& feature_model,
                              const LabeledImage& image, const std::vector<Proposal>& proposals,
                              double score_threshold = 0.8, double nms_iou = 0.5);

// CSV: image_id,class,x1,y1,x2,y2,score
void save_detections(const std::string& path, const std::vector<Detection>& detections);
std::vector<Detection> load_detections(const std::string& path);

// Checkpoint: magic "WSDM", u32 header, f32 blobs in declaration order.
void save_detector(const std::string& path, const DetectorModel& model);
DetectorModel load_detector(const std::string& path);

}  // namespace wsol
