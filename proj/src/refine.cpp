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

#include "wsol/refine.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "wsol/common.hpp"
#include "wsol/image_io.hpp"

namespace wsol {

int SegmentMask::foreground_count() const {
    int n = 0;
    for (uint8_t v : mask) n += v;
    return n;
}

namespace {

struct MeanColor {
    double rgb[3] = {0, 0, 0};
    long long count = 0;

    void add(const Image& img, int x, int y) {
        for (int c = 0; c < 3; ++c) rgb[c] += img.at(x, y, c);
        ++count;
    }
    void finalize(const double* fallback) {
        if (count > 0) {
            for (double& v : rgb) v /= static_cast<double>(count);
        } else if (fallback) {
            for (int c = 0; c < 3; ++c) rgb[c] = fallback[c];
        }
    }
    double dist2(const Image& img, int x, int y) const {
        double d = 0;
        for (int c = 0; c < 3; ++c) {
            double e = img.at(x, y, c) - rgb[c];
            d += e * e;
        }
        return d;
    }
};

SegmentMask box_interior_mask(const Image& image, const Box& box) {
    SegmentMask m;
    m.width = image.width;
    m.height = image.height;
    m.mask.assign(static_cast<size_t>(image.width) * image.height, 0);
    m.provenance = box;
    m.fallback = true;
    for (int y = box.y1; y < box.y2; ++y)
        for (int x = box.x1; x < box.x2; ++x) m.mask[static_cast<size_t>(y) * image.width + x] = 1;
    return m;
}

}  // namespace

namespace {

double model_dist2(const MeanColor& a, const MeanColor& b) {
    double d = 0;
    for (int c = 0; c < 3; ++c) {
        double e = a.rgb[c] - b.rgb[c];
        d += e * e;
    }
    return d;
}

}  // namespace

SegmentMask segment_box(const Image& image, const Box& box_in, const SegmenterConfig& config) {
    Box box = clip_box(box_in, image.width, image.height);
    if (!box.valid()) throw Error("segment_box: degenerate box");

    // When the seed box sits inside a uniform region, the ring sees the same
    // colors as the interior and the two models collapse; widen the context
    // until they separate (or the region is the whole image).
    double expand = config.expand_frac;
    Box region{};
    MeanColor fg, bg;
    auto in_box = [&](int x, int y) { return x >= box.x1 && x < box.x2 && y >= box.y1 && y < box.y2; };
    for (int attempt = 0;; ++attempt) {
        int dx = std::max(1, static_cast<int>(std::lround(box.width() * expand * 0.5)));
        int dy = std::max(1, static_cast<int>(std::lround(box.height() * expand * 0.5)));
        region = clip_box(Box{box.x1 - dx, box.y1 - dy, box.x2 + dx, box.y2 + dy}, image.width, image.height);

        fg = MeanColor{};
        bg = MeanColor{};
        for (int y = region.y1; y < region.y2; ++y)
            for (int x = region.x1; x < region.x2; ++x) (in_box(x, y) ? fg : bg).add(image, x, y);
        if (bg.count == 0 || fg.count == 0) return box_interior_mask(image, box);
        fg.finalize(nullptr);
        bg.finalize(nullptr);

        bool whole_image = region == image.bounds();
        if (model_dist2(fg, bg) > 1e-4 || whole_image || attempt >= 6) break;
        expand *= 2.0;
    }

    const int rw = region.width(), rh = region.height();

    std::vector<uint8_t> assign(static_cast<size_t>(rw) * rh, 0);
    for (int iter = 0; iter < config.max_iterations; ++iter) {
        bool changed = false;
        for (int y = region.y1; y < region.y2; ++y)
            for (int x = region.x1; x < region.x2; ++x) {
                // ties go to background
                uint8_t label = fg.dist2(image, x, y) < bg.dist2(image, x, y) ? 1 : 0;
                uint8_t& slot = assign[static_cast<size_t>(y - region.y1) * rw + (x - region.x1)];
                if (slot != label) {
                    slot = label;
                    changed = true;
                }
            }
        if (!changed && iter > 0) break;

        MeanColor nfg, nbg;
        for (int y = region.y1; y < region.y2; ++y)
            for (int x = region.x1; x < region.x2; ++x)
                (assign[static_cast<size_t>(y - region.y1) * rw + (x - region.x1)] ? nfg : nbg).add(image, x, y);
        nfg.finalize(fg.rgb);  // empty model keeps its previous mean
        nbg.finalize(bg.rgb);
        fg = nfg;
        bg = nbg;
    }

    // largest 4-connected foreground component intersecting the original box
    std::vector<int> component(static_cast<size_t>(rw) * rh, -1);
    int best_comp = -1;
    long long best_size = 0;
    std::vector<int> stack;
    int next_comp = 0;
    for (int start = 0; start < rw * rh; ++start) {
        if (!assign[start] || component[start] >= 0) continue;
        int comp = next_comp++;
        long long size = 0;
        bool touches_box = false;
        stack.push_back(start);
        component[start] = comp;
        while (!stack.empty()) {
            int cur = stack.back();
            stack.pop_back();
            ++size;
            int cx = cur % rw, cy = cur / rw;
            if (in_box(cx + region.x1, cy + region.y1)) touches_box = true;
            const int nx[4] = {cx - 1, cx + 1, cx, cx};
            const int ny[4] = {cy, cy, cy - 1, cy + 1};
            for (int k = 0; k < 4; ++k) {
                if (nx[k] < 0 || nx[k] >= rw || ny[k] < 0 || ny[k] >= rh) continue;
                int idx = ny[k] * rw + nx[k];
                if (assign[idx] && component[idx] < 0) {
                    component[idx] = comp;
                    stack.push_back(idx);
                }
            }
        }
        if (touches_box && size > best_size) {
            best_size = size;
            best_comp = comp;
        }
    }
    if (best_comp < 0) return box_interior_mask(image, box);

    SegmentMask m;
    m.width = image.width;
    m.height = image.height;
    m.mask.assign(static_cast<size_t>(image.width) * image.height, 0);
    m.provenance = box;
    for (int y = 0; y < rh; ++y)
        for (int x = 0; x < rw; ++x)
            if (component[static_cast<size_t>(y) * rw + x] == best_comp)
                m.mask[static_cast<size_t>(y + region.y1) * image.width + (x + region.x1)] = 1;
    return m;
}

Box tighten_box(const SegmentMask& mask) {
    int min_x = mask.width, min_y = mask.height, max_x = -1, max_y = -1;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) {
                min_x = std::min(min_x, x);
                min_y = std::min(min_y, y);
                max_x = std::max(max_x, x);
                max_y = std::max(max_y, y);
            }
    if (max_x < 0) throw Error("tighten_box: empty mask");
    return Box{min_x, min_y, max_x + 1, max_y + 1};
}

Box refine_box(const Image& image, const Box& box, const SegmenterConfig& config) {
    return tighten_box(segment_box(image, box, config));
}

void save_mask_png(const std::string& path, const SegmentMask& mask) {
    std::vector<uint8_t> gray(mask.mask.size());
    for (size_t i = 0; i < mask.mask.size(); ++i) gray[i] = mask.mask[i] ? 255 : 0;
    write_png_gray(path, mask.width, mask.height, gray);
}

}  // namespace wsol
