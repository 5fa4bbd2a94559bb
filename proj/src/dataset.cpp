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

#include "wsol/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "wsol/common.hpp"
#include "wsol/hash.hpp"
#include "wsol/image_io.hpp"
#include "wsol/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace wsol {

const LabeledImage* Dataset::find(const std::string& id) const {
    for (const auto& img : images)
        if (img.id == id) return &img;
    return nullptr;
}

const LabeledImage& Dataset::require(const std::string& id) const {
    const LabeledImage* img = find(id);
    if (!img) throw Error("unknown image id: " + id);
    return *img;
}

namespace {

float quantize255(double v) {
    double c = std::min(std::max(v, 0.0), 1.0);
    return static_cast<float>(std::lround(c * 255.0) / 255.0);
}

const std::vector<ClassStyle>& builtin_palette() {
    static const std::vector<ClassStyle> palette = {
        {ShapeKind::Square, {0.85f, 0.10f, 0.10f}},   // red square
        {ShapeKind::Disc, {0.10f, 0.25f, 0.85f}},     // blue disc
        {ShapeKind::Triangle, {0.10f, 0.70f, 0.15f}}, // green triangle
        {ShapeKind::Diamond, {0.90f, 0.75f, 0.10f}},  // yellow diamond
        {ShapeKind::Square, {0.65f, 0.15f, 0.75f}},
        {ShapeKind::Disc, {0.10f, 0.70f, 0.70f}},
        {ShapeKind::Triangle, {0.90f, 0.45f, 0.10f}},
        {ShapeKind::Diamond, {0.45f, 0.30f, 0.15f}},
    };
    return palette;
}

bool inside_shape(ShapeKind kind, const Box& b, int x, int y) {
    double px = x + 0.5, py = y + 0.5;
    double cx = b.cx(), cy = b.cy();
    double hw = 0.5 * b.width(), hh = 0.5 * b.height();
    switch (kind) {
        case ShapeKind::Square:
            return true;  // box region is the square
        case ShapeKind::Disc: {
            double dx = (px - cx) / hw, dy = (py - cy) / hh;
            return dx * dx + dy * dy <= 1.0;
        }
        case ShapeKind::Triangle: {
            // apex at top center, base along the bottom edge
            double fy = (py - b.y1) / (b.height());  // 0 at top, 1 at bottom
            double half_span = hw * fy;
            return std::abs(px - cx) <= half_span;
        }
        case ShapeKind::Diamond:
            return std::abs(px - cx) / hw + std::abs(py - cy) / hh <= 1.0;
    }
    return false;
}

void render_shape(Image& img, ShapeKind kind, const Box& b, const std::array<float, 3>& color) {
    for (int y = b.y1; y < b.y2; ++y)
        for (int x = b.x1; x < b.x2; ++x)
            if (inside_shape(kind, b, x, y))
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = quantize255(color[c]);
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& config) {
    if (config.num_classes < 2) throw ConfigError("synthetic: num_classes must be >= 2");
    if (config.width < 32 || config.height < 32) throw ConfigError("synthetic: image size must be >= 32");
    if (config.num_images <= 0) throw ConfigError("synthetic: num_images must be positive");
    if (config.objects_min < 0 || config.objects_max < config.objects_min)
        throw ConfigError("synthetic: bad objects_per_image range");
    if (config.object_min_size < 4 || config.object_max_size < config.object_min_size)
        throw ConfigError("synthetic: bad object size range");
    if (config.object_max_size > std::min(config.width, config.height))
        throw ConfigError("synthetic: object larger than image");

    std::vector<ClassStyle> styles = config.styles;
    if (styles.empty()) {
        const auto& palette = builtin_palette();
        for (int c = 0; c < config.num_classes; ++c) styles.push_back(palette[static_cast<size_t>(c) % palette.size()]);
    } else if (static_cast<int>(styles.size()) < config.num_classes) {
        throw ConfigError("synthetic: fewer styles than classes");
    }

    Rng rng(config.seed);
    Dataset ds;
    ds.num_classes = config.num_classes;
    ds.images.reserve(static_cast<size_t>(config.num_images));

    const float base_gray = 0.82f;
    for (int i = 0; i < config.num_images; ++i) {
        LabeledImage li;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "img%04d", i);
        li.id = idbuf;
        li.labels.assign(static_cast<size_t>(config.num_classes), 0);
        li.pixels = Image(config.width, config.height);

        // background with mild pixel noise
        for (int y = 0; y < config.height; ++y)
            for (int x = 0; x < config.width; ++x) {
                float v = quantize255(base_gray + rng.uniform(-config.background_noise, config.background_noise));
                for (int c = 0; c < 3; ++c) li.pixels.at(x, y, c) = v;
            }

        // clutter: small neutral marks that belong to no class
        int marks = static_cast<int>(std::lround(config.clutter_density * config.width * config.height / 1000.0));
        for (int m = 0; m < marks; ++m) {
            int s = rng.uniform_int(2, 4);
            int x1 = rng.uniform_int(0, config.width - s);
            int y1 = rng.uniform_int(0, config.height - s);
            float shade = quantize255(rng.uniform(0.35, 0.6));
            float tint[3] = {shade, quantize255(shade * 0.95), quantize255(shade * 0.9)};
            fill_box(li.pixels, Box{x1, y1, x1 + s, y1 + s}, tint);
        }

        int count = config.objects_min == config.objects_max
                        ? config.objects_min
                        : rng.uniform_int(config.objects_min, config.objects_max);
        for (int k = 0; k < count; ++k) {
            int class_id = rng.uniform_int(config.num_classes);
            int size = rng.uniform_int(config.object_min_size, config.object_max_size);
            Box placed{};
            bool ok = false;
            for (int attempt = 0; attempt < 30 && !ok; ++attempt) {
                int x1 = rng.uniform_int(0, config.width - size);
                int y1 = rng.uniform_int(0, config.height - size);
                placed = Box{x1, y1, x1 + size, y1 + size};
                ok = true;
                for (const auto& g : li.gt_boxes)
                    if (iou(g.box, placed) > config.max_overlap) ok = false;
            }
            if (!ok) continue;  // crowded scene, drop this object
            render_shape(li.pixels, styles[static_cast<size_t>(class_id)].shape, placed,
                         styles[static_cast<size_t>(class_id)].color);
            li.gt_boxes.push_back(GtBox{class_id, placed});
            li.labels[static_cast<size_t>(class_id)] = 1;
        }
        ds.images.push_back(std::move(li));
    }
    return ds;
}

std::array<double, 3> mean_pixel(const Dataset& dataset) {
    if (dataset.images.empty()) throw Error("mean_pixel: empty dataset");
    double sum[3] = {0, 0, 0};
    long long count = 0;
    for (const auto& img : dataset.images) {
        const auto& px = img.pixels;
        for (size_t i = 0; i < px.data.size(); i += 3) {
            sum[0] += px.data[i];
            sum[1] += px.data[i + 1];
            sum[2] += px.data[i + 2];
        }
        count += static_cast<long long>(px.width) * px.height;
    }
    if (count == 0) throw Error("mean_pixel: dataset has no pixels");
    return {sum[0] / count, sum[1] / count, sum[2] / count};
}

void save_dataset(const Dataset& dataset, const std::string& dir, const std::string& image_format) {
    if (image_format != "png" && image_format != "wsol") throw ConfigError("save_dataset: format must be png or wsol");
    fs::create_directories(fs::path(dir) / "images");
    json manifest;
    manifest["num_classes"] = dataset.num_classes;
    manifest["images"] = json::array();
    for (const auto& img : dataset.images) {
        std::string file = "images/" + img.id + "." + image_format;
        if (image_format == "png")
            write_png((fs::path(dir) / file).string(), img.pixels);
        else
            write_wsol((fs::path(dir) / file).string(), img.pixels);
        json j;
        j["id"] = img.id;
        j["file"] = file;
        j["labels"] = img.labels;
        json gt = json::array();
        for (const auto& g : img.gt_boxes)
            gt.push_back({{"class", g.class_id}, {"x1", g.box.x1}, {"y1", g.box.y1}, {"x2", g.box.x2}, {"y2", g.box.y2}});
        j["gt"] = gt;
        manifest["images"].push_back(j);
    }
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

Dataset load_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw MissingArtifactError("manifest not found: " + manifest_path);
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw ParseError(manifest_path, 0, std::string("invalid JSON: ") + e.what());
    }
    Dataset ds;
    ds.num_classes = manifest.at("num_classes").get<int>();
    fs::path base = fs::path(manifest_path).parent_path();
    for (const auto& j : manifest.at("images")) {
        LabeledImage img;
        img.id = j.at("id").get<std::string>();
        img.labels = j.at("labels").get<std::vector<uint8_t>>();
        if (static_cast<int>(img.labels.size()) != ds.num_classes)
            throw Error("label vector length mismatch for image " + img.id);
        img.pixels = read_image((base / j.at("file").get<std::string>()).string());
        if (j.contains("gt"))
            for (const auto& g : j.at("gt"))
                img.gt_boxes.push_back(GtBox{g.at("class").get<int>(),
                                             Box{g.at("x1").get<int>(), g.at("y1").get<int>(), g.at("x2").get<int>(),
                                                 g.at("y2").get<int>()}});
        ds.images.push_back(std::move(img));
    }
    return ds;
}

ProposalSet load_proposals(const std::string& path, const Dataset& dataset, ProposalLoadStats* stats) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("proposals file not found: " + path);
    ProposalSet out;
    ProposalLoadStats local{};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() < 5 || fields.size() > 6) throw ParseError(path, line_no, "expected 5 or 6 fields");
        Box b;
        double objectness = 0.0;
        try {
            b.x1 = std::stoi(fields[1]);
            b.y1 = std::stoi(fields[2]);
            b.x2 = std::stoi(fields[3]);
            b.y2 = std::stoi(fields[4]);
            if (fields.size() == 6) objectness = std::stod(fields[5]);
        } catch (const std::exception&) {
            throw ParseError(path, line_no, "non-numeric box field");
        }
        const LabeledImage* img = dataset.find(fields[0]);
        if (!img) throw ParseError(path, line_no, "unknown image id: " + fields[0]);
        Box clipped = clip_box(b, img->pixels.width, img->pixels.height);
        if (!clipped.valid()) {
            ++local.dropped_boxes;
            continue;
        }
        out[fields[0]].push_back(Proposal{clipped, objectness});
    }
    if (stats) *stats = local;
    return out;
}

void save_proposals(const std::string& path, const ProposalSet& proposals) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write proposals: " + path);
    for (const auto& [id, list] : proposals)
        for (const auto& p : list)
            out << id << "," << p.box.x1 << "," << p.box.y1 << "," << p.box.x2 << "," << p.box.y2 << ","
                << format_double(p.objectness) << "\n";
}

std::vector<Proposal> grid_proposals(int width, int height, const GridProposalConfig& config, uint64_t image_salt) {
    if (config.min_size < 4) throw ConfigError("grid_proposals: min_size too small");
    std::vector<Proposal> out;
    int max_size = static_cast<int>(std::min(width, height) * config.max_size_frac);

    auto positions = [](int extent, int size, int stride) {
        std::vector<int> xs;
        for (int x = 0; x + size <= extent; x += stride) xs.push_back(x);
        if (xs.empty() || xs.back() != extent - size) xs.push_back(extent - size);  // flush to far edge
        return xs;
    };

    for (double s = config.min_size; s <= max_size; s *= config.scale_ratio) {
        int size = static_cast<int>(std::lround(s));
        int stride = std::max(2, static_cast<int>(std::lround(size * config.stride_frac)));
        for (int y : positions(height, size, stride))
            for (int x : positions(width, size, stride)) out.push_back(Proposal{Box{x, y, x + size, y + size}, 0.0});
    }

    Rng rng = Rng(config.seed).fork(image_salt);
    for (int i = 0; i < config.jitter_count; ++i) {
        int size = rng.uniform_int(config.min_size, std::max(config.min_size, max_size));
        int x1 = rng.uniform_int(0, std::max(0, width - size));
        int y1 = rng.uniform_int(0, std::max(0, height - size));
        out.push_back(Proposal{Box{x1, y1, x1 + size, y1 + size}, 0.0});
    }
    return out;
}

ProposalSet grid_proposals_for(const Dataset& dataset, const GridProposalConfig& config) {
    ProposalSet out;
    for (const auto& img : dataset.images)
        out[img.id] = grid_proposals(img.pixels.width, img.pixels.height, config, fnv1a64(img.id));
    return out;
}

}  // namespace wsol
