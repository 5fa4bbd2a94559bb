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

#include "wsol/image.hpp"

#include <cmath>

#include "wsol/common.hpp"

namespace wsol {

Image resize_bilinear(const Image& src, int out_w, int out_h) {
    if (src.width == out_w && src.height == out_h) return src;
    if (src.empty() || out_w <= 0 || out_h <= 0) throw Error("resize_bilinear: empty image or bad size");
    Image out(out_w, out_h);
    const double sx = static_cast<double>(src.width) / out_w;
    const double sy = static_cast<double>(src.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int ya = std::clamp(y0, 0, src.height - 1);
        int yb = std::clamp(y0 + 1, 0, src.height - 1);
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int xa = std::clamp(x0, 0, src.width - 1);
            int xb = std::clamp(x0 + 1, 0, src.width - 1);
            for (int c = 0; c < 3; ++c) {
                double top = (1.0 - wx) * src.at(xa, ya, c) + wx * src.at(xb, ya, c);
                double bot = (1.0 - wx) * src.at(xa, yb, c) + wx * src.at(xb, yb, c);
                out.at(x, y, c) = static_cast<float>((1.0 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

Image crop(const Image& src, const Box& box) {
    if (!box.valid() || !contains(src.bounds(), box)) throw Error("crop: box out of bounds or degenerate");
    Image out(box.width(), box.height());
    for (int y = box.y1; y < box.y2; ++y)
        for (int x = box.x1; x < box.x2; ++x)
            for (int c = 0; c < 3; ++c) out.at(x - box.x1, y - box.y1, c) = src.at(x, y, c);
    return out;
}

void fill_box(Image& img, const Box& box, const float rgb[3]) {
    for (int y = box.y1; y < box.y2; ++y)
        for (int x = box.x1; x < box.x2; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = rgb[c];
}

}  // namespace wsol
