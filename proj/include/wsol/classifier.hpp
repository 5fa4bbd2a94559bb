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

#include <cstdint>
#include <string>
#include <vector>

#include "wsol/dataset.hpp"
#include "wsol/image.hpp"

namespace wsol {

/// Fixed architecture: conv3x3(c1)+ReLU -> maxpool2 -> conv3x3(K)+ReLU ->
/// GAP -> linear(C). The classifier head acts directly on globally pooled
/// last-conv maps, so per-class activation maps decompose as
/// m_c(x,y) = sum_k w_k^c a_k(x,y).
struct ClassifierConfig {
    int num_classes = 2;
    int input_size = 64;  // bilinear resize target, must be even
    int conv1_channels = 16;
    int conv2_channels = 32;  // K, the number of last-conv feature maps

    // training
    int iterations = 800;
    int batch_size = 32;
    double learning_rate = 0.05;
    double momentum = 0.0;      // plain SGD unless configured
    double weight_decay = 0.0;  // L2, off by default
    uint64_t seed = 1;
};

struct ClassifierModel {
    ClassifierConfig cfg;
    // declaration order is also the checkpoint blob order
    std::vector<double> conv1_w, conv1_b;  // [c1][3][3][3], [c1]
    std::vector<double> conv2_w, conv2_b;  // [K][c1][3][3], [K]
    std::vector<double> fc_w, fc_b;        // [C][K] (w_k^c), [C]
    bool initialized = false;

    int num_classes() const { return cfg.num_classes; }
    int feature_count() const { return cfg.conv2_channels; }
    int map_size() const { return cfg.input_size / 2; }
};

/// Last-conv activations a_k (post-ReLU, non-negative) plus the pooled
/// means and class logits they produce.
struct FeatureMapStack {
    int width = 0, height = 0;
    int k = 0;
    std::vector<double> maps;    // k planes, plane-major
    std::vector<double> gap;     // k
    std::vector<double> logits;  // C, pre-sigmoid z_c

    const double* plane(int i) const { return maps.data() + static_cast<size_t>(i) * width * height; }
};

struct ForwardResult {
    std::vector<double> probs;  // 2C: entries 2c-1/2c hold presence/absence
    FeatureMapStack features;
};

ClassifierModel init_classifier(const ClassifierConfig& cfg);

/// y (C binary) -> t (2C binary): t_{2c-1}=y_c, t_{2c}=1-y_c.
std::vector<uint8_t> expand_labels(const std::vector<uint8_t>& y);

/// L = -sum_c [t_{2c-1} log p_{2c-1} + t_{2c} log p_{2c}], probabilities
/// clamped to [1e-7, 1-1e-7] before the log.
double multilabel_loss(const std::vector<double>& p, const std::vector<uint8_t>& t);

ForwardResult forward(const ClassifierModel& model, const Image& image);
FeatureMapStack feature_maps(const ClassifierModel& model, const Image& image);
std::vector<std::vector<double>> class_weights(const ClassifierModel& model);  // C x K

struct Gradients {
    std::vector<double> conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b;
    double loss = 0.0;  // summed over the batch
};

/// Exact analytic gradient of the summed multi-label loss over a batch.
Gradients loss_gradient(const ClassifierModel& model, const std::vector<const LabeledImage*>& batch);

struct TrainStats {
    std::vector<double> loss_history;  // per-iteration mean sample loss
};

ClassifierModel train_classifier(const Dataset& dataset, const ClassifierConfig& cfg, TrainStats* stats = nullptr);

/// Fraction of (image, class) pairs with p_{2c-1} >= 0.5 matching y_c.
double multilabel_accuracy(const ClassifierModel& model, const Dataset& dataset);

// Checkpoint: magic "WSCM", u32 header, f32 parameter blobs in declaration order.
void save_classifier(const std::string& path, const ClassifierModel& model);
ClassifierModel load_classifier(const std::string& path);

/// Mutable views over every parameter vector, in declaration order.
std::vector<std::vector<double>*> parameter_blocks(ClassifierModel& model);
std::vector<std::vector<double>*> gradient_blocks(Gradients& grads);

}  // namespace wsol
