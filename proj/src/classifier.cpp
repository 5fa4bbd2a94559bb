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

#include "wsol/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "wsol/common.hpp"
#include "wsol/rng.hpp"

namespace wsol {

namespace {

constexpr double kProbClamp = 1e-7;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_config(const ClassifierConfig& cfg) {
    if (cfg.num_classes < 1) throw ConfigError("classifier: num_classes must be >= 1");
    if (cfg.input_size < 8 || cfg.input_size % 2 != 0) throw ConfigError("classifier: input_size must be even, >= 8");
    if (cfg.conv1_channels < 1 || cfg.conv2_channels < 1) throw ConfigError("classifier: channel counts must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("classifier: batch_size must be >= 1");
}

/// Resized image as plane-major doubles (RGB planes).
std::vector<double> to_planes(const Image& image, int size) {
    Image resized = resize_bilinear(image, size, size);
    std::vector<double> planes(static_cast<size_t>(3) * size * size);
    size_t area = static_cast<size_t>(size) * size;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c) planes[c * area + static_cast<size_t>(y) * size + x] = resized.at(x, y, c);
    return planes;
}

// 3x3 convolution, stride 1, zero padding 1; weights [oc][ic][ky][kx].
// The three horizontal taps are fused into one pass per source row.
void conv3x3(const double* in, int in_ch, int w, int h, const double* weights, const double* bias, int out_ch,
             double* out) {
    if (w < 2) throw Error("conv3x3: width too small");
    const size_t area = static_cast<size_t>(w) * h;
    for (int oc = 0; oc < out_ch; ++oc) {
        double* op = out + oc * area;
        std::fill(op, op + area, bias[oc]);
        for (int ic = 0; ic < in_ch; ++ic) {
            const double* ip = in + ic * area;
            const double* wp = weights + (static_cast<size_t>(oc) * in_ch + ic) * 9;
            for (int y = 0; y < h; ++y) {
                double* dst = op + static_cast<size_t>(y) * w;
                for (int ky = 0; ky < 3; ++ky) {
                    int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    const double* src = ip + static_cast<size_t>(sy) * w;
                    const double w0 = wp[ky * 3], w1 = wp[ky * 3 + 1], w2 = wp[ky * 3 + 2];
                    dst[0] += w1 * src[0] + w2 * src[1];
                    for (int x = 1; x < w - 1; ++x) dst[x] += w0 * src[x - 1] + w1 * src[x] + w2 * src[x + 1];
                    dst[w - 1] += w0 * src[w - 2] + w1 * src[w - 1];
                }
            }
        }
    }
}

// Backward pass of conv3x3: accumulates dW/dB and (optionally) dIn.
void conv3x3_backward(const double* in, int in_ch, int w, int h, const double* weights, int out_ch,
                      const double* d_out, double* d_weights, double* d_bias, double* d_in) {
    if (w < 2) throw Error("conv3x3_backward: width too small");
    const size_t area = static_cast<size_t>(w) * h;
    for (int oc = 0; oc < out_ch; ++oc) {
        const double* dop = d_out + oc * area;
        double db = 0.0;
        for (size_t i = 0; i < area; ++i) db += dop[i];
        d_bias[oc] += db;
        for (int ic = 0; ic < in_ch; ++ic) {
            const double* ip = in + ic * area;
            double* dip = d_in ? d_in + ic * area : nullptr;
            const double* wp = weights + (static_cast<size_t>(oc) * in_ch + ic) * 9;
            double* dwp = d_weights + (static_cast<size_t>(oc) * in_ch + ic) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                double dw0 = 0.0, dw1 = 0.0, dw2 = 0.0;
                const double w0 = wp[ky * 3], w1 = wp[ky * 3 + 1], w2 = wp[ky * 3 + 2];
                for (int y = 0; y < h; ++y) {
                    int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    const double* src = ip + static_cast<size_t>(sy) * w;
                    const double* dd = dop + static_cast<size_t>(y) * w;
                    dw1 += dd[0] * src[0];
                    dw2 += dd[0] * src[1];
                    for (int x = 1; x < w - 1; ++x) {
                        dw0 += dd[x] * src[x - 1];
                        dw1 += dd[x] * src[x];
                        dw2 += dd[x] * src[x + 1];
                    }
                    dw0 += dd[w - 1] * src[w - 2];
                    dw1 += dd[w - 1] * src[w - 1];
                    if (dip) {
                        double* dsrc = dip + static_cast<size_t>(sy) * w;
                        dsrc[0] += w1 * dd[0] + w0 * dd[1];
                        for (int x = 1; x < w - 1; ++x)
                            dsrc[x] += w2 * dd[x - 1] + w1 * dd[x] + w0 * dd[x + 1];
                        dsrc[w - 1] += w2 * dd[w - 2] + w1 * dd[w - 1];
                    }
                }
                dwp[ky * 3] += dw0;
                dwp[ky * 3 + 1] += dw1;
                dwp[ky * 3 + 2] += dw2;
            }
        }
    }
}

struct ForwardCache {
    std::vector<double> input;      // 3 planes at S x S
    std::vector<double> relu1;      // c1 planes at S x S (post-ReLU)
    std::vector<uint8_t> mask1;     // ReLU mask for conv1
    std::vector<double> pooled;     // c1 planes at S/2 x S/2
    std::vector<int> pool_src;      // flat source index per pooled cell
    std::vector<double> relu2;      // K planes at S/2 x S/2 (= a_k)
    std::vector<uint8_t> mask2;     // ReLU mask for conv2
    std::vector<double> gap;        // K
    std::vector<double> logits;     // C
};

void run_forward(const ClassifierModel& model, const Image& image, ForwardCache& cache) {
    if (!model.initialized) throw Error("classifier: model not initialized");
    const int s = model.cfg.input_size;
    const int c1 = model.cfg.conv1_channels;
    const int k = model.cfg.conv2_channels;
    const int hs = s / 2;
    const size_t area1 = static_cast<size_t>(s) * s;
    const size_t area2 = static_cast<size_t>(hs) * hs;

    cache.input = to_planes(image, s);

    cache.relu1.assign(static_cast<size_t>(c1) * area1, 0.0);
    conv3x3(cache.input.data(), 3, s, s, model.conv1_w.data(), model.conv1_b.data(), c1, cache.relu1.data());
    cache.mask1.resize(cache.relu1.size());
    for (size_t i = 0; i < cache.relu1.size(); ++i) {
        cache.mask1[i] = cache.relu1[i] > 0.0;
        if (!cache.mask1[i]) cache.relu1[i] = 0.0;
    }

    cache.pooled.assign(static_cast<size_t>(c1) * area2, 0.0);
    cache.pool_src.assign(static_cast<size_t>(c1) * area2, 0);
    for (int c = 0; c < c1; ++c) {
        const double* ip = cache.relu1.data() + c * area1;
        double* op = cache.pooled.data() + c * area2;
        int* sp = cache.pool_src.data() + c * area2;
        for (int y = 0; y < hs; ++y)
            for (int x = 0; x < hs; ++x) {
                int best_idx = (2 * y) * s + 2 * x;
                double best = ip[best_idx];
                const int cand[3] = {(2 * y) * s + 2 * x + 1, (2 * y + 1) * s + 2 * x, (2 * y + 1) * s + 2 * x + 1};
                for (int idx : cand)
                    if (ip[idx] > best) {
                        best = ip[idx];
                        best_idx = idx;
                    }
                op[static_cast<size_t>(y) * hs + x] = best;
                sp[static_cast<size_t>(y) * hs + x] = best_idx;
            }
    }

    cache.relu2.assign(static_cast<size_t>(k) * area2, 0.0);
    conv3x3(cache.pooled.data(), c1, hs, hs, model.conv2_w.data(), model.conv2_b.data(), k, cache.relu2.data());
    cache.mask2.resize(cache.relu2.size());
    for (size_t i = 0; i < cache.relu2.size(); ++i) {
        cache.mask2[i] = cache.relu2[i] > 0.0;
        if (!cache.mask2[i]) cache.relu2[i] = 0.0;
    }

    cache.gap.assign(static_cast<size_t>(k), 0.0);
    for (int f = 0; f < k; ++f) {
        const double* p = cache.relu2.data() + f * area2;
        double sum = 0.0;
        for (size_t i = 0; i < area2; ++i) sum += p[i];
        cache.gap[f] = sum / static_cast<double>(area2);
    }

    const int classes = model.cfg.num_classes;
    cache.logits.assign(static_cast<size_t>(classes), 0.0);
    for (int c = 0; c < classes; ++c) {
        double z = model.fc_b[c];
        for (int f = 0; f < k; ++f) z += model.fc_w[static_cast<size_t>(c) * k + f] * cache.gap[f];
        cache.logits[c] = z;
    }
}

FeatureMapStack stack_from_cache(const ClassifierModel& model, ForwardCache& cache) {
    FeatureMapStack fs;
    fs.width = model.map_size();
    fs.height = model.map_size();
    fs.k = model.cfg.conv2_channels;
    fs.maps = std::move(cache.relu2);
    fs.gap = std::move(cache.gap);
    fs.logits = std::move(cache.logits);
    return fs;
}

}  // namespace

ClassifierModel init_classifier(const ClassifierConfig& cfg) {
    check_config(cfg);
    ClassifierModel m;
    m.cfg = cfg;
    const int c1 = cfg.conv1_channels, k = cfg.conv2_channels, classes = cfg.num_classes;
    m.conv1_w.resize(static_cast<size_t>(c1) * 3 * 9);
    m.conv1_b.assign(static_cast<size_t>(c1), 0.0);
    m.conv2_w.resize(static_cast<size_t>(k) * c1 * 9);
    m.conv2_b.assign(static_cast<size_t>(k), 0.0);
    m.fc_w.resize(static_cast<size_t>(classes) * k);
    m.fc_b.assign(static_cast<size_t>(classes), 0.0);

    Rng rng(cfg.seed);
    auto glorot = [&rng](std::vector<double>& w, int fan_in, int fan_out) {
        double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (double& v : w) v = rng.uniform(-bound, bound);
    };
    glorot(m.conv1_w, 3 * 9, c1 * 9);
    glorot(m.conv2_w, c1 * 9, k * 9);
    // classification layer: small uniform init
    for (double& v : m.fc_w) v = rng.uniform(-0.05, 0.05);
    m.initialized = true;
    return m;
}

std::vector<uint8_t> expand_labels(const std::vector<uint8_t>& y) {
    std::vector<uint8_t> t(y.size() * 2);
    for (size_t c = 0; c < y.size(); ++c) {
        t[2 * c] = y[c] ? 1 : 0;
        t[2 * c + 1] = y[c] ? 0 : 1;
    }
    return t;
}

double multilabel_loss(const std::vector<double>& p, const std::vector<uint8_t>& t) {
    if (p.size() != t.size() || p.size() % 2 != 0) throw Error("multilabel_loss: dimension mismatch");
    double loss = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (!t[i]) continue;
        double v = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
        loss -= std::log(v);
    }
    return loss;
}

ForwardResult forward(const ClassifierModel& model, const Image& image) {
    ForwardCache cache;
    run_forward(model, image, cache);
    const int classes = model.cfg.num_classes;
    ForwardResult out;
    out.probs.resize(static_cast<size_t>(2) * classes);
    for (int c = 0; c < classes; ++c) {
        double prob = sigmoid(cache.logits[c]);
        out.probs[2 * c] = prob;
        out.probs[2 * c + 1] = 1.0 - prob;  // complement by construction
    }
    out.features = stack_from_cache(model, cache);
    return out;
}

FeatureMapStack feature_maps(const ClassifierModel& model, const Image& image) {
    ForwardCache cache;
    run_forward(model, image, cache);
    return stack_from_cache(model, cache);
}

std::vector<std::vector<double>> class_weights(const ClassifierModel& model) {
    const int k = model.cfg.conv2_channels;
    std::vector<std::vector<double>> w(static_cast<size_t>(model.cfg.num_classes));
    for (int c = 0; c < model.cfg.num_classes; ++c)
        w[c].assign(model.fc_w.begin() + static_cast<size_t>(c) * k, model.fc_w.begin() + static_cast<size_t>(c + 1) * k);
    return w;
}

Gradients loss_gradient(const ClassifierModel& model, const std::vector<const LabeledImage*>& batch) {
    if (batch.empty()) throw Error("loss_gradient: empty batch");
    Gradients g;
    g.conv1_w.assign(model.conv1_w.size(), 0.0);
    g.conv1_b.assign(model.conv1_b.size(), 0.0);
    g.conv2_w.assign(model.conv2_w.size(), 0.0);
    g.conv2_b.assign(model.conv2_b.size(), 0.0);
    g.fc_w.assign(model.fc_w.size(), 0.0);
    g.fc_b.assign(model.fc_b.size(), 0.0);

    const int s = model.cfg.input_size;
    const int hs = s / 2;
    const int c1 = model.cfg.conv1_channels;
    const int k = model.cfg.conv2_channels;
    const int classes = model.cfg.num_classes;
    const size_t area1 = static_cast<size_t>(s) * s;
    const size_t area2 = static_cast<size_t>(hs) * hs;

    ForwardCache cache;
    std::vector<double> d_relu2(static_cast<size_t>(k) * area2);
    std::vector<double> d_pooled(static_cast<size_t>(c1) * area2);
    std::vector<double> d_relu1(static_cast<size_t>(c1) * area1);

    for (const LabeledImage* sample : batch) {
        run_forward(model, sample->pixels, cache);
        std::vector<uint8_t> t = expand_labels(sample->labels);
        if (t.size() != static_cast<size_t>(2) * classes) throw Error("loss_gradient: label dimension mismatch");

        // loss value (clamped) and logit gradient dL/dz_c = sigma(z_c) - t_{2c-1}
        std::vector<double> probs(static_cast<size_t>(2) * classes);
        std::vector<double> d_logits(static_cast<size_t>(classes));
        for (int c = 0; c < classes; ++c) {
            double prob = sigmoid(cache.logits[c]);
            probs[2 * c] = prob;
            probs[2 * c + 1] = 1.0 - prob;
            d_logits[c] = prob - static_cast<double>(t[2 * c]);
        }
        g.loss += multilabel_loss(probs, t);

        // fc layer
        std::vector<double> d_gap(static_cast<size_t>(k), 0.0);
        for (int c = 0; c < classes; ++c) {
            g.fc_b[c] += d_logits[c];
            for (int f = 0; f < k; ++f) {
                g.fc_w[static_cast<size_t>(c) * k + f] += d_logits[c] * cache.gap[f];
                d_gap[f] += d_logits[c] * model.fc_w[static_cast<size_t>(c) * k + f];
            }
        }

        // GAP spreads gradient uniformly, then ReLU mask
        for (int f = 0; f < k; ++f) {
            double dv = d_gap[f] / static_cast<double>(area2);
            double* dp = d_relu2.data() + f * area2;
            const uint8_t* mask = cache.mask2.data() + f * area2;
            for (size_t i = 0; i < area2; ++i) dp[i] = mask[i] ? dv : 0.0;
        }

        std::fill(d_pooled.begin(), d_pooled.end(), 0.0);
        conv3x3_backward(cache.pooled.data(), c1, hs, hs, model.conv2_w.data(), k, d_relu2.data(), g.conv2_w.data(),
                         g.conv2_b.data(), d_pooled.data());

        // maxpool routes gradient to the argmax cell, then ReLU mask of conv1
        std::fill(d_relu1.begin(), d_relu1.end(), 0.0);
        for (int c = 0; c < c1; ++c) {
            const double* dp = d_pooled.data() + c * area2;
            const int* src = cache.pool_src.data() + c * area2;
            double* dr = d_relu1.data() + c * area1;
            for (size_t i = 0; i < area2; ++i) dr[src[i]] += dp[i];
        }
        for (size_t i = 0; i < d_relu1.size(); ++i)
            if (!cache.mask1[i]) d_relu1[i] = 0.0;

        conv3x3_backward(cache.input.data(), 3, s, s, model.conv1_w.data(), c1, d_relu1.data(), g.conv1_w.data(),
                         g.conv1_b.data(), nullptr);
    }
    return g;
}

std::vector<std::vector<double>*> parameter_blocks(ClassifierModel& model) {
    return {&model.conv1_w, &model.conv1_b, &model.conv2_w, &model.conv2_b, &model.fc_w, &model.fc_b};
}

std::vector<std::vector<double>*> gradient_blocks(Gradients& grads) {
    return {&grads.conv1_w, &grads.conv1_b, &grads.conv2_w, &grads.conv2_b, &grads.fc_w, &grads.fc_b};
}

ClassifierModel train_classifier(const Dataset& dataset, const ClassifierConfig& cfg, TrainStats* stats) {
    if (dataset.images.empty()) throw Error("train_classifier: empty dataset");
    for (const auto& img : dataset.images)
        if (static_cast<int>(img.labels.size()) != cfg.num_classes)
            throw Error("train_classifier: label width mismatch for " + img.id);

    ClassifierModel model = init_classifier(cfg);
    Rng rng(cfg.seed ^ 0x5eedba7c);
    const int n = static_cast<int>(dataset.images.size());

    std::vector<std::vector<double>> velocity;
    if (cfg.momentum != 0.0)
        for (auto* block : parameter_blocks(model)) velocity.emplace_back(block->size(), 0.0);

    std::vector<const LabeledImage*> batch;
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        batch.clear();
        for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(&dataset.images[rng.uniform_int(n)]);
        Gradients g = loss_gradient(model, batch);
        double mean_loss = g.loss / cfg.batch_size;
        if (!std::isfinite(mean_loss))
            throw TrainingError("train_classifier: loss diverged at iteration " + std::to_string(iter));
        if (stats) stats->loss_history.push_back(mean_loss);

        auto params = parameter_blocks(model);
        auto grads = gradient_blocks(g);
        const double scale = cfg.learning_rate / cfg.batch_size;
        for (size_t blk = 0; blk < params.size(); ++blk) {
            auto& p = *params[blk];
            auto& gr = *grads[blk];
            if (cfg.weight_decay != 0.0)
                for (size_t i = 0; i < p.size(); ++i) gr[i] += cfg.weight_decay * cfg.batch_size * p[i];
            if (cfg.momentum != 0.0) {
                auto& v = velocity[blk];
                for (size_t i = 0; i < p.size(); ++i) {
                    v[i] = cfg.momentum * v[i] - scale * gr[i];
                    p[i] += v[i];
                }
            } else {
                for (size_t i = 0; i < p.size(); ++i) p[i] -= scale * gr[i];
            }
        }
    }
    return model;
}

double multilabel_accuracy(const ClassifierModel& model, const Dataset& dataset) {
    if (dataset.images.empty()) throw Error("multilabel_accuracy: empty dataset");
    long long correct = 0, total = 0;
    for (const auto& img : dataset.images) {
        ForwardResult r = forward(model, img.pixels);
        for (int c = 0; c < model.cfg.num_classes; ++c) {
            bool predicted = r.probs[2 * c] >= 0.5;
            if (predicted == (img.labels[c] != 0)) ++correct;
            ++total;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

namespace {

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
}

void write_blob(std::ostream& out, const std::vector<double>& v) {
    for (double d : v) {
        float f = static_cast<float>(d);
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
}

void read_blob(std::istream& in, std::vector<double>& v) {
    for (double& d : v) {
        float f;
        in.read(reinterpret_cast<char*>(&f), 4);
        d = f;
    }
}

}  // namespace

void save_classifier(const std::string& path, const ClassifierModel& model) {
    if (!model.initialized) throw Error("save_classifier: model not initialized");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write("WSCM", 4);
    write_u32(out, 1);  // version
    write_u32(out, static_cast<uint32_t>(model.cfg.num_classes));
    write_u32(out, static_cast<uint32_t>(model.cfg.input_size));
    write_u32(out, static_cast<uint32_t>(model.cfg.conv1_channels));
    write_u32(out, static_cast<uint32_t>(model.cfg.conv2_channels));
    for (const auto* block : parameter_blocks(const_cast<ClassifierModel&>(model))) write_blob(out, *block);
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

ClassifierModel load_classifier(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("classifier checkpoint not found: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "WSCM", 4) != 0) throw IoError("bad checkpoint magic in " + path);
    uint32_t version = read_u32(in);
    if (version != 1) throw IoError("unsupported checkpoint version in " + path);
    ClassifierConfig cfg;
    cfg.num_classes = static_cast<int>(read_u32(in));
    cfg.input_size = static_cast<int>(read_u32(in));
    cfg.conv1_channels = static_cast<int>(read_u32(in));
    cfg.conv2_channels = static_cast<int>(read_u32(in));
    ClassifierModel model = init_classifier(cfg);
    for (auto* block : parameter_blocks(model)) read_blob(in, *block);
    if (!in) throw IoError("truncated checkpoint: " + path);
    return model;
}

}  // namespace wsol
