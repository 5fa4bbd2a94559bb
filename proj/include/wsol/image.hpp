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

#include <vector>

#include "wsol/geometry.hpp"

namespace wsol {

/// RGB image, float32 in [0,1], row-major interleaved (y, x, channel).
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, float fill = 0.f) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, fill) {}

    float& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    float at(int x, int y, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }

    bool empty() const { return data.empty(); }
    Box bounds() const { return Box{0, 0, width, height}; }
};

/// Bilinear resize (half-pixel centers). Returns the input unchanged if the
/// size already matches.
Image resize_bilinear(const Image& src, int out_w, int out_h);

/// Copy of the region [box.x1,box.x2) x [box.y1,box.y2); box must be valid
/// and inside the image.
Image crop(const Image& src, const Box& box);

/// In-place constant fill of a box region.
void fill_box(Image& img, const Box& box, const float rgb[3]);

}  // namespace wsol
