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

#include "wsol/mil.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "wsol/common.hpp"
#include "wsol/rng.hpp"

namespace wsol {

std::pair<double, double> smoothed_hinge(double z) {
    if (z <= 0.0) return {0.5 - z, -1.0};
    if (z < 1.0) {
        double d = 1.0 - z;
        return {0.5 * d * d, -d};
    }
    return {0.0, 0.0};
}

int LatentSelection::selected_count() const {
    int n = 0;
    for (uint8_t v : z) n += v;
    return n;
}

double MilClassifier::score(const std::vector<double>& features) const {
    if (features.size() != weights.size()) throw Error("mil: feature dimension mismatch");
    double s = bias;
    for (size_t i = 0; i < weights.size(); ++i) s += weights[i] * features[i];
    return s;
}

double regularized_hinge_risk(const std::vector<double>& weights, double bias,
                              const std::vector<const std::vector<double>*>& positives,
                              const std::vector<const std::vector<double>*>& negatives, double lambda) {
    if (lambda <= 0) throw ConfigError("mil: lambda must be positive");
    size_t n = positives.size() + negatives.size();
    if (n == 0) throw Error("mil: no instances");
    auto margin = [&](const std::vector<double>& x, double y) {
        double s = bias;
        for (size_t i = 0; i < weights.size(); ++i) s += weights[i] * x[i];
        return y * s;
    };
    double risk = 0.0;
    for (const auto* x : positives) risk += smoothed_hinge(margin(*x, 1.0)).first;
    for (const auto* x : negatives) risk += smoothed_hinge(margin(*x, -1.0)).first;
    risk /= static_cast<double>(n);
    double reg = 0.0;
    for (double w : weights) reg += w * w;
    return risk + reg / (2.0 * lambda);
}

namespace {

struct FitProblem {
    std::vector<const std::vector<double>*> xs;
    std::vector<double> ys;  // +1 / -1
};

/// Seeded-shuffle SGD epochs followed by a short full-batch polish, keeping
/// the best iterate by full objective (never worse than the incoming
/// parameters). The weight step is capped so the strong quadratic penalty
/// keeps a memory span of the whole dataset instead of the last few samples;
/// the unregularized bias gets its own rate.
void fit_classifier(const FitProblem& prob, const MilConfig& cfg, Rng& rng, std::vector<double>& w, double& b,
                    const std::vector<const std::vector<double>*>& pos_sel,
                    const std::vector<const std::vector<double>*>& neg) {
    const size_t n = prob.xs.size();
    const size_t dim = w.size();
    std::vector<double> best_w = w;
    double best_b = b;
    double best_obj = regularized_hinge_risk(w, b, pos_sel, neg, cfg.lambda);
    auto keep_best = [&]() {
        double obj = regularized_hinge_risk(w, b, pos_sel, neg, cfg.lambda);
        if (obj < best_obj) {
            best_obj = obj;
            best_w = w;
            best_b = b;
        }
    };

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    const double lr_w = std::min(cfg.learning_rate, 0.5 * cfg.lambda / static_cast<double>(n));
    const double lr_b = cfg.learning_rate / static_cast<double>(n);
    for (int epoch = 0; epoch < cfg.t_inner; ++epoch) {
        for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(static_cast<int>(i))]);
        for (size_t idx : order) {
            const auto& x = *prob.xs[idx];
            double y = prob.ys[idx];
            double s = b;
            for (size_t d = 0; d < dim; ++d) s += w[d] * x[d];
            double g = smoothed_hinge(y * s).second * y;
            for (size_t d = 0; d < dim; ++d) w[d] -= lr_w * (g * x[d] + w[d] / cfg.lambda);
            b -= lr_b * g;
        }
        keep_best();
    }

    // full-batch descent to settle the bias and squeeze out SGD noise
    const double gd_w = 0.45 * cfg.lambda;
    const double gd_b = 0.3;
    std::vector<double> gw(dim);
    for (int iter = 0; iter < 200; ++iter) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        for (size_t idx = 0; idx < n; ++idx) {
            const auto& x = *prob.xs[idx];
            double y = prob.ys[idx];
            double s = b;
            for (size_t d = 0; d < dim; ++d) s += w[d] * x[d];
            double g = smoothed_hinge(y * s).second * y / static_cast<double>(n);
            for (size_t d = 0; d < dim; ++d) gw[d] += g * x[d];
            gb += g;
        }
        for (size_t d = 0; d < dim; ++d) w[d] -= gd_w * (gw[d] + w[d] / cfg.lambda);
        b -= gd_b * gb;
        if ((iter & 15) == 15) keep_best();
    }
    keep_best();
    w = best_w;
    b = best_b;
}

}  // namespace

MilResult mil_train(const std::vector<Bag>& bags, const MilConfig& cfg) {
    std::vector<size_t> pos_bags, neg_bags;
    size_t dim = 0;
    for (size_t i = 0; i < bags.size(); ++i) {
        const Bag& bag = bags[i];
        if (bag.positive) {
            if (bag.instances.empty()) throw Error("mil: positive bag without instances");
            pos_bags.push_back(i);
        } else {
            neg_bags.push_back(i);
        }
        for (const auto& inst : bag.instances) {
            if (dim == 0) dim = inst.features.size();
            if (inst.features.size() != dim) throw Error("mil: feature dimension mismatch");
        }
    }
    if (pos_bags.empty()) throw Error("mil: no positive bags");
    if (neg_bags.empty()) throw Error("mil: no negative bags");
    if (dim == 0) throw Error("mil: empty feature vectors");

    std::vector<const std::vector<double>*> negatives;
    for (size_t i : neg_bags)
        for (const auto& inst : bags[i].instances) negatives.push_back(&inst.features);

    MilResult result;
    result.classifier.cfg = cfg;
    result.classifier.weights.assign(dim, 0.0);
    result.classifier.bias = 0.0;

    Rng rng(cfg.seed ^ 0x3b97a5);
    std::vector<size_t> selected(pos_bags.size(), 0);
    std::vector<size_t> prev_selected;

    for (int outer = 0; outer < cfg.t_outer; ++outer) {
        // (a) instance selection: mining score first, classifier score after
        for (size_t p = 0; p < pos_bags.size(); ++p) {
            const Bag& bag = bags[pos_bags[p]];
            size_t best = 0;
            double best_score = outer == 0 ? bag.instances[0].mining_score
                                           : result.classifier.score(bag.instances[0].features);
            for (size_t j = 1; j < bag.instances.size(); ++j) {
                double s = outer == 0 ? bag.instances[j].mining_score
                                      : result.classifier.score(bag.instances[j].features);
                if (s > best_score) {
                    best_score = s;
                    best = j;
                }
            }
            selected[p] = best;
        }
        if (outer > 0 && selected == prev_selected) {
            result.converged = true;
            break;
        }
        prev_selected = selected;

        // (b) fit on selected positives vs all negative instances
        std::vector<const std::vector<double>*> positives;
        for (size_t p = 0; p < pos_bags.size(); ++p)
            positives.push_back(&bags[pos_bags[p]].instances[selected[p]].features);
        FitProblem prob;
        for (const auto* x : positives) {
            prob.xs.push_back(x);
            prob.ys.push_back(1.0);
        }
        for (const auto* x : negatives) {
            prob.xs.push_back(x);
            prob.ys.push_back(-1.0);
        }
        fit_classifier(prob, cfg, rng, result.classifier.weights, result.classifier.bias, positives, negatives);
        result.objective_history.push_back(
            regularized_hinge_risk(result.classifier.weights, result.classifier.bias, positives, negatives,
                                   cfg.lambda));
    }

    result.selections.resize(bags.size());
    for (size_t i = 0; i < bags.size(); ++i) result.selections[i].z.assign(bags[i].instances.size(), 0);
    for (size_t p = 0; p < pos_bags.size(); ++p) result.selections[pos_bags[p]].z[prev_selected[p]] = 1;
    return result;
}

std::vector<SelectedInstance> select_instances(const MilClassifier& classifier, const std::vector<Bag>& bags,
                                               double tau) {
    std::vector<SelectedInstance> out;
    for (const Bag& bag : bags) {
        if (!bag.positive || bag.instances.empty()) continue;
        size_t best = 0;
        double best_score = classifier.score(bag.instances[0].features);
        std::vector<std::pair<size_t, double>> hits;
        for (size_t j = 0; j < bag.instances.size(); ++j) {
            double s = classifier.score(bag.instances[j].features);
            if (s > best_score) {
                best_score = s;
                best = j;
            }
            if (s >= tau) hits.emplace_back(j, s);
        }
        bool has_best = false;
        for (const auto& [j, s] : hits)
            if (j == best) has_best = true;
        if (!has_best) hits.emplace_back(best, best_score);  // argmax floor: 1'z >= 1
        for (const auto& [j, s] : hits)
            out.push_back(SelectedInstance{bag.class_id, bag.image_id, bag.instances[j].box, s});
    }
    return out;
}

std::vector<double> extract_instance_features(const ClassifierModel&, const FeatureMapStack& features,
                                              int image_width, int image_height, const Box& box) {
    if (!box.valid()) throw Error("extract_instance_features: degenerate box");
    Box grid = map_box_to_grid(box, image_width, image_height, features.width, features.height);
    if (!grid.valid()) throw Error("extract_instance_features: box maps to empty grid");
    const int k = features.k;
    std::vector<double> out(static_cast<size_t>(k) + 4);
    const double cells = static_cast<double>(grid.area());
    for (int f = 0; f < k; ++f) {
        const double* plane = features.plane(f);
        double sum = 0.0;
        for (int y = grid.y1; y < grid.y2; ++y)
            for (int x = grid.x1; x < grid.x2; ++x) sum += plane[static_cast<size_t>(y) * features.width + x];
        out[f] = sum / cells;
    }
    out[k + 0] = static_cast<double>(box.width()) / image_width;
    out[k + 1] = static_cast<double>(box.height()) / image_height;
    out[k + 2] = box.cx() / image_width;
    out[k + 3] = box.cy() / image_height;
    return out;
}

std::vector<double> extract_instance_features(const ClassifierModel& model, const Image& image, const Box& box) {
    FeatureMapStack features = feature_maps(model, image);
    return extract_instance_features(model, features, image.width, image.height, box);
}

std::vector<Bag> build_bags_for_class(const ClassifierModel& model, const Dataset& dataset, const MinedSet& mined,
                                      int class_id, int negative_cap) {
    std::vector<Bag> bags;
    struct NegativeRef {
        size_t bag_index;
        BagInstance instance;
        double fused;
        std::string image_id;
        int rank;
    };
    std::vector<NegativeRef> negative_pool;

    for (const auto& image : dataset.images) {
        auto it = mined.find(image.id);
        if (it == mined.end()) continue;
        FeatureMapStack features;  // shared per image across its mined boxes
        bool have_features = false;
        auto featurize = [&](const Box& box) {
            if (!have_features) {
                features = feature_maps(model, image.pixels);
                have_features = true;
            }
            return extract_instance_features(model, features, image.pixels.width, image.pixels.height, box);
        };

        if (image.positive_for(class_id)) {
            auto cit = it->second.find(class_id);
            if (cit == it->second.end() || cit->second.empty()) continue;
            Bag bag;
            bag.image_id = image.id;
            bag.class_id = class_id;
            bag.positive = true;
            for (const auto& sp : cit->second)
                bag.instances.push_back(BagInstance{sp.box, featurize(sp.box), sp.fused});
            bags.push_back(std::move(bag));
        } else {
            Bag bag;
            bag.image_id = image.id;
            bag.class_id = class_id;
            bag.positive = false;
            bags.push_back(std::move(bag));
            size_t bag_index = bags.size() - 1;
            for (const auto& [other_class, list] : it->second) {
                for (size_t rank = 0; rank < list.size(); ++rank) {
                    const auto& sp = list[rank];
                    negative_pool.push_back(NegativeRef{bag_index,
                                                        BagInstance{sp.box, featurize(sp.box), sp.fused}, sp.fused,
                                                        image.id, static_cast<int>(rank)});
                }
            }
        }
    }

    std::sort(negative_pool.begin(), negative_pool.end(), [](const NegativeRef& a, const NegativeRef& b) {
        if (a.fused != b.fused) return a.fused > b.fused;
        if (a.image_id != b.image_id) return a.image_id < b.image_id;
        return a.rank < b.rank;
    });
    if (negative_cap > 0 && static_cast<int>(negative_pool.size()) > negative_cap)
        negative_pool.resize(static_cast<size_t>(negative_cap));
    for (auto& ref : negative_pool) bags[ref.bag_index].instances.push_back(std::move(ref.instance));

    // drop negative bags that ended up empty
    std::vector<Bag> out;
    for (auto& bag : bags)
        if (bag.positive || !bag.instances.empty()) out.push_back(std::move(bag));
    return out;
}

void save_selected(const std::string& path, const std::vector<SelectedInstance>& selected) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write selected instances: " + path);
    for (const auto& s : selected)
        out << s.class_id << "," << s.image_id << "," << s.box.x1 << "," << s.box.y1 << "," << s.box.x2 << ","
            << s.box.y2 << "," << format_double(s.score) << "\n";
}

std::vector<SelectedInstance> load_selected(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("selected instances not found: " + path);
    std::vector<SelectedInstance> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 7) throw ParseError(path, line_no, "expected 7 fields");
        try {
            SelectedInstance s;
            s.class_id = std::stoi(fields[0]);
            s.image_id = fields[1];
            s.box = Box{std::stoi(fields[2]), std::stoi(fields[3]), std::stoi(fields[4]), std::stoi(fields[5])};
            s.score = std::stod(fields[6]);
            out.push_back(std::move(s));
        } catch (const std::exception&) {
            throw ParseError(path, line_no, "malformed selected instance row");
        }
    }
    return out;
}

}  // namespace wsol
