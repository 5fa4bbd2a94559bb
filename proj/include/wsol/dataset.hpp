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

#include "wsol/common.hpp"
#include "wsol/image.hpp"

namespace wsol {

struct GtBox {
    int class_id = 0;
    Box box;
    bool operator==(const GtBox&) const = default;
};

/// One training image with its image-level label vector. gt_boxes exist for
/// evaluation only; no training stage may read them.
struct LabeledImage {
    std::string id;
    Image pixels;
    std::vector<uint8_t> labels;  // y, one 0/1 entry per class
    std::vector<GtBox> gt_boxes;

    bool positive_for(int c) const { return labels[static_cast<size_t>(c)] != 0; }
};

struct Dataset {
    int num_classes = 0;
    std::vector<LabeledImage> images;

    const LabeledImage* find(const std::string& id) const;
    const LabeledImage& require(const std::string& id) const;  // throws if absent
};

enum class ShapeKind { Square, Disc, Triangle, Diamond };

struct ClassStyle {
    ShapeKind shape = ShapeKind::Square;
    std::array<float, 3> color{1.f, 0.f, 0.f};
};

struct SyntheticConfig {
    int num_images = 100;
    int width = 64;
    int height = 64;
    int num_classes = 2;
    int objects_min = 1;
    int objects_max = 2;
    int object_min_size = 20;
    int object_max_size = 32;
    double clutter_density = 2.0;  // clutter marks per 1000 pixels
    double background_noise = 0.03;
    double max_overlap = 0.2;  // rejection threshold between placed objects
    uint64_t seed = 1;
    std::vector<ClassStyle> styles;  // empty -> built-in palette
};

/// Deterministic synthetic scenes: one distinctive solid shape+color per
/// class on a lightly cluttered background. All pixel values land on the
/// k/255 grid so PNG storage is lossless.
Dataset generate_synthetic(const SyntheticConfig& config);

/// Per-channel arithmetic mean over every pixel of every image.
std::array<double, 3> mean_pixel(const Dataset& dataset);

struct Proposal {
    Box box;
    double objectness = 0.0;
};
using ProposalSet = std::map<std::string, std::vector<Proposal>>;

// --- file formats -----------------------------------------------------------
// Dataset manifest: JSON {"images":[{id,file,labels,gt:[{class,x1,y1,x2,y2}]}]}
// with image files (.png or .wsol) resolved relative to the manifest.
// Proposals: CSV image_id,x1,y1,x2,y2,objectness (objectness optional).

void save_dataset(const Dataset& dataset, const std::string& dir, const std::string& image_format = "png");
Dataset load_manifest(const std::string& manifest_path);

struct ProposalLoadStats {
    int dropped_boxes = 0;  // zero area after clipping to image bounds
};

ProposalSet load_proposals(const std::string& path, const Dataset& dataset, ProposalLoadStats* stats = nullptr);
void save_proposals(const std::string& path, const ProposalSet& proposals);

// --- substitute proposal source ---------------------------------------------

struct GridProposalConfig {
    int min_size = 16;
    double max_size_frac = 0.62;  // of min(W,H)
    double scale_ratio = 1.25;
    double stride_frac = 0.25;  // of box size
    int jitter_count = 25;
    uint64_t seed = 99;
};

/// Class-independent proposals: dense multi-scale center grid plus seeded
/// random jitter boxes. Stands in for an external proposal source.
std::vector<Proposal> grid_proposals(int width, int height, const GridProposalConfig& config, uint64_t image_salt);
ProposalSet grid_proposals_for(const Dataset& dataset, const GridProposalConfig& config);

}  // namespace wsol
