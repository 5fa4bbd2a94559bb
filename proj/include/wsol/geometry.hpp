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

#include <algorithm>
#include <cstdint>

namespace wsol {

/// Axis-aligned box in integer pixel coordinates, half-open:
/// covers [x1,x2) x [y1,y2). Area is exactly width*height, which keeps
/// integral-image arithmetic and IoU exact.
struct Box {
    int x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    int width() const { return x2 - x1; }
    int height() const { return y2 - y1; }
    long long area() const { return static_cast<long long>(width()) * height(); }
    bool valid() const { return x2 > x1 && y2 > y1; }

    double cx() const { return x1 + 0.5 * width(); }
    double cy() const { return y1 + 0.5 * height(); }

    bool operator==(const Box& o) const = default;
};

inline Box clip_box(const Box& b, int width, int height) {
    return Box{std::max(b.x1, 0), std::max(b.y1, 0), std::min(b.x2, width), std::min(b.y2, height)};
}

inline long long intersection_area(const Box& a, const Box& b) {
    long long w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    long long h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (w <= 0 || h <= 0) return 0;
    return w * h;
}

/// Intersection over union in [0,1] with half-open integer areas.
inline double iou(const Box& a, const Box& b) {
    long long inter = intersection_area(a, b);
    if (inter == 0) return 0.0;
    long long uni = a.area() + b.area() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline bool contains(const Box& outer, const Box& inner) {
    return outer.x1 <= inner.x1 && outer.y1 <= inner.y1 && outer.x2 >= inner.x2 && outer.y2 >= inner.y2;
}

}  // namespace wsol
