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
#include <vector>

#include "wsol/dataset.hpp"
#include "wsol/image.hpp"

namespace wsol {

/// Binary mask at image resolution with the box that produced it.
struct SegmentMask {
    int width = 0, height = 0;
    std::vector<uint8_t> mask;  // 0 background, 1 foreground
    Box provenance;
    bool fallback = false;  // segmentation degenerated; mask is the box interior

    bool at(int x, int y) const { return mask[static_cast<size_t>(y) * width + x] != 0; }
    int foreground_count() const;
};

struct SegmenterConfig {
    double expand_frac = 0.25;  // working region grows by this fraction of w/h
    int max_iterations = 20;
};

/// Foreground/background segmentation seeded by the box: two RGB mean
/// models (interior vs surrounding ring), alternating nearest-model
/// assignment and mean re-estimation, then the largest 4-connected
/// foreground component that intersects the original box. Degenerate cases
/// fall back to the box interior (flagged).
SegmentMask segment_box(const Image& image, const Box& box, const SegmenterConfig& config = {});

/// Tightest box covering every foreground pixel; throws on an empty mask.
Box tighten_box(const SegmentMask& mask);

/// segment_box followed by tighten_box.
Box refine_box(const Image& image, const Box& box, const SegmenterConfig& config = {});

void save_mask_png(const std::string& path, const SegmentMask& mask);

}  // namespace wsol
