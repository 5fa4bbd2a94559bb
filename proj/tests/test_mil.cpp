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

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "wsol/mil.hpp"
#include "wsol/rng.hpp"

using namespace wsol;

namespace {

BagInstance inst(double x, double y, double score = 0.0) {
    return BagInstance{Box{0, 0, 4, 4}, {x, y}, score};
}

Bag positive_bag(const std::string& id, std::vector<BagInstance> instances) {
    Bag b;
    b.image_id = id;
    b.positive = true;
    b.instances = std::move(instances);
    return b;
}

Bag negative_bag(const std::string& id, std::vector<BagInstance> instances) {
    Bag b;
    b.image_id = id;
    b.positive = false;
    b.instances = std::move(instances);
    return b;
}

/// Oracle optimizer: full-batch gradient descent on the same objective,
/// long horizon, independent of the SGD in mil_train.
std::pair<std::vector<double>, double> oracle_fit(const std::vector<const std::vector<double>*>& pos,
                                                  const std::vector<const std::vector<double>*>& neg, double lambda,
                                                  size_t dim) {
    std::vector<double> w(dim, 0.0);
    double b = 0.0;
    const double lr_w = 0.9 * lambda, lr_b = 0.3;  // the bias is unregularized
    const size_t n = pos.size() + neg.size();
    for (int iter = 0; iter < 4000; ++iter) {
        std::vector<double> gw(dim, 0.0);
        double gb = 0.0;
        auto accumulate = [&](const std::vector<double>& x, double y) {
            double s = b;
            for (size_t d = 0; d < dim; ++d) s += w[d] * x[d];
            double g = smoothed_hinge(y * s).second * y / static_cast<double>(n);
            for (size_t d = 0; d < dim; ++d) gw[d] += g * x[d];
            gb += g;
        };
        for (const auto* x : pos) accumulate(*x, 1.0);
        for (const auto* x : neg) accumulate(*x, -1.0);
        for (size_t d = 0; d < dim; ++d) w[d] -= lr_w * (gw[d] + w[d] / lambda);
        b -= lr_b * gb;
    }
    std::vector<double> wb = w;
    wb.push_back(b);
    return {wb, regularized_hinge_risk(w, b, pos, neg, lambda)};
}

/// Enumerate every one-instance-per-positive-bag combination, fit each with
/// the oracle optimizer, return the best objective value.
struct BruteForceResult {
    std::vector<size_t> best_combo;
    double best_objective = 0.0;
    std::vector<double> objectives;  // per combination, enumeration order
};

BruteForceResult brute_force_selections(const std::vector<Bag>& bags, double lambda) {
    std::vector<size_t> pos_index;
    std::vector<const std::vector<double>*> negatives;
    size_t dim = 0;
    for (size_t i = 0; i < bags.size(); ++i) {
        if (bags[i].positive)
            pos_index.push_back(i);
        else
            for (const auto& in : bags[i].instances) negatives.push_back(&in.features);
        for (const auto& in : bags[i].instances) dim = in.features.size();
    }
    std::vector<size_t> combo(pos_index.size(), 0);
    BruteForceResult result;
    bool first = true;
    while (true) {
        std::vector<const std::vector<double>*> positives;
        for (size_t p = 0; p < pos_index.size(); ++p)
            positives.push_back(&bags[pos_index[p]].instances[combo[p]].features);
        double obj = oracle_fit(positives, negatives, lambda, dim).second;
        result.objectives.push_back(obj);
        if (first || obj < result.best_objective) {
            result.best_objective = obj;
            result.best_combo = combo;
            first = false;
        }
        size_t k = 0;
        while (k < combo.size()) {
            if (++combo[k] < bags[pos_index[k]].instances.size()) break;
            combo[k] = 0;
            ++k;
        }
        if (k == combo.size()) break;
    }
    return result;
}

std::vector<size_t> selections_of(const MilResult& result, const std::vector<Bag>& bags) {
    std::vector<size_t> out;
    for (size_t i = 0; i < bags.size(); ++i) {
        if (!bags[i].positive) continue;
        for (size_t j = 0; j < result.selections[i].z.size(); ++j)
            if (result.selections[i].z[j]) out.push_back(j);
    }
    return out;
}

/// Seeded separable toy problem: one true positive per positive bag near
/// (2,2), decoys and negatives near the origin.
std::vector<Bag> toy_problem(uint64_t seed) {
    Rng rng(seed);
    std::vector<Bag> bags;
    for (int p = 0; p < 3; ++p) {
        std::vector<BagInstance> ins;
        int n = 2 + rng.uniform_int(3);  // 2..4 instances
        int true_pos = rng.uniform_int(n);
        for (int j = 0; j < n; ++j) {
            if (j == true_pos)
                ins.push_back(inst(2.0 + rng.uniform(-0.3, 0.3), 2.0 + rng.uniform(-0.3, 0.3),
                                   rng.uniform(0.7, 1.0)));
            else
                ins.push_back(inst(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(0.0, 0.5)));
        }
        bags.push_back(positive_bag("p" + std::to_string(p), std::move(ins)));
    }
    for (int q = 0; q < 3; ++q) {
        std::vector<BagInstance> ins;
        int n = 2 + rng.uniform_int(3);
        for (int j = 0; j < n; ++j) ins.push_back(inst(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)));
        bags.push_back(negative_bag("n" + std::to_string(q), std::move(ins)));
    }
    return bags;
}

}  // namespace

TEST_SUITE("mil") {

TEST_CASE("smoothed hinge: pieces, joins, finite differences") {
    CHECK(smoothed_hinge(1.5).first == 0.0);
    CHECK(smoothed_hinge(1.5).second == 0.0);
    CHECK(smoothed_hinge(0.0).first == doctest::Approx(0.5));
    CHECK(smoothed_hinge(0.0).second == doctest::Approx(-1.0));
    CHECK(smoothed_hinge(-2.0).first == doctest::Approx(2.5));
    CHECK(smoothed_hinge(0.5).first == doctest::Approx(0.125));

    // continuity at both joins
    CHECK(smoothed_hinge(-1e-12).first == doctest::Approx(smoothed_hinge(1e-12).first).epsilon(1e-9));
    CHECK(smoothed_hinge(1.0 - 1e-12).first == doctest::Approx(smoothed_hinge(1.0 + 1e-12).first).epsilon(1e-9));

    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        double z = rng.uniform(-3.0, 3.0);
        double h = 1e-6;
        double fd = (smoothed_hinge(z + h).first - smoothed_hinge(z - h).first) / (2 * h);
        CHECK(smoothed_hinge(z).second == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("mil_train selections match the brute-force oracle on separable data") {
    MilConfig cfg;
    cfg.seed = 1;
    int matches = 0, total = 0;
    for (uint64_t seed = 100; seed < 110; ++seed) {
        std::vector<Bag> bags = toy_problem(seed);
        MilResult result = mil_train(bags, cfg);
        BruteForceResult oracle = brute_force_selections(bags, cfg.lambda);

        std::vector<size_t> got = selections_of(result, bags);
        // ties: every combo whose oracle objective is within 1e-9 of optimum counts
        std::vector<size_t> pos_sizes;
        for (const auto& b : bags)
            if (b.positive) pos_sizes.push_back(b.instances.size());
        size_t flat = 0, mult = 1;
        for (size_t p = 0; p < got.size(); ++p) {
            flat += got[p] * mult;
            mult *= pos_sizes[p];
        }
        bool ok = oracle.objectives[flat] <= oracle.best_objective + 1e-9;
        if (ok) ++matches;
        ++total;
    }
    CHECK(matches >= total - 1);  // allow one near-miss in ten
}

TEST_CASE("bag constraints hold on every output") {
    std::vector<Bag> bags = toy_problem(7);
    MilResult result = mil_train(bags, MilConfig{});
    REQUIRE(result.selections.size() == bags.size());
    for (size_t i = 0; i < bags.size(); ++i) {
        CHECK(result.selections[i].z.size() == bags[i].instances.size());
        if (bags[i].positive)
            CHECK(result.selections[i].selected_count() >= 1);
        else
            CHECK(result.selections[i].selected_count() == 0);
    }
}

TEST_CASE("objective is non-increasing across outer iterations") {
    for (uint64_t seed : {3ull, 19ull, 31ull}) {
        std::vector<Bag> bags = toy_problem(seed);
        MilConfig cfg;
        cfg.seed = seed;
        MilResult result = mil_train(bags, cfg);
        for (size_t i = 1; i < result.objective_history.size(); ++i)
            CHECK(result.objective_history[i] <= result.objective_history[i - 1] + 1e-9);
    }
}

TEST_CASE("single-instance positive bag is always selected") {
    std::vector<Bag> bags;
    bags.push_back(positive_bag("p0", {inst(-3.0, -3.0, 0.0)}));  // even an ugly instance
    bags.push_back(negative_bag("n0", {inst(0.1, 0.0), inst(-0.1, 0.2)}));
    MilResult result = mil_train(bags, MilConfig{});
    CHECK(result.selections[0].z == std::vector<uint8_t>{1});
}

TEST_CASE("duplicating every bag leaves selections unchanged") {
    std::vector<Bag> bags = toy_problem(23);
    MilConfig cfg;
    MilResult base = mil_train(bags, cfg);

    std::vector<Bag> doubled = bags;
    for (const auto& b : bags) {
        Bag copy = b;
        copy.image_id += "_dup";
        doubled.push_back(copy);
    }
    MilResult twice = mil_train(doubled, cfg);

    std::vector<size_t> a = selections_of(base, bags);
    std::vector<size_t> b2 = selections_of(twice, doubled);
    REQUIRE(b2.size() == 2 * a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(b2[i] == a[i]);
        CHECK(b2[i + a.size()] == a[i]);
    }
}

TEST_CASE("feature scaling with lambda/s^2 keeps selections") {
    const double s = 7.0;
    for (uint64_t seed : {41ull, 43ull}) {
        std::vector<Bag> bags = toy_problem(seed);
        MilConfig cfg;
        cfg.seed = 2;
        MilResult base = mil_train(bags, cfg);

        std::vector<Bag> scaled = bags;
        for (auto& bag : scaled)
            for (auto& in : bag.instances)
                for (double& v : in.features) v *= s;
        MilConfig scaled_cfg = cfg;
        scaled_cfg.lambda = cfg.lambda / (s * s);
        MilResult result = mil_train(scaled, scaled_cfg);
        CHECK(selections_of(result, bags) == selections_of(base, bags));
    }
}

TEST_CASE("select_instances: tau extremes and hand enumeration") {
    std::vector<Bag> bags;
    bags.push_back(positive_bag("p0", {inst(2, 2), inst(1.5, 1.5), inst(0, 0)}));
    bags.push_back(positive_bag("p1", {inst(-1, -1), inst(2.5, 2.5)}));
    bags.push_back(negative_bag("n0", {inst(0, 0)}));

    MilClassifier clf;
    clf.weights = {1.0, 1.0};
    clf.bias = 0.0;  // score = x + y

    SUBCASE("tau = +inf keeps exactly the argmax per positive bag") {
        auto out = select_instances(clf, bags, 1e18);
        REQUIRE(out.size() == 2);
        CHECK(out[0].image_id == "p0");
        CHECK(out[0].score == doctest::Approx(4.0));
        CHECK(out[1].image_id == "p1");
        CHECK(out[1].score == doctest::Approx(5.0));
    }
    SUBCASE("tau = -inf keeps every instance of every positive bag") {
        auto out = select_instances(clf, bags, -1e18);
        CHECK(out.size() == 5);
    }
    SUBCASE("mid tau matches hand enumeration") {
        // scores p0: {4, 3, 0}, p1: {-2, 5}; tau = 2.5 -> {4, 3} and {5}
        auto out = select_instances(clf, bags, 2.5);
        REQUIRE(out.size() == 3);
        CHECK(out[0].score == doctest::Approx(4.0));
        CHECK(out[1].score == doctest::Approx(3.0));
        CHECK(out[2].score == doctest::Approx(5.0));
    }
}

TEST_CASE("degenerate inputs are rejected") {
    CHECK_THROWS_AS(mil_train({negative_bag("n", {inst(0, 0)})}, MilConfig{}), Error);
    std::vector<Bag> mismatched;
    mismatched.push_back(positive_bag("p", {inst(1, 1)}));
    Bag bad = negative_bag("n", {});
    bad.instances.push_back(BagInstance{Box{0, 0, 2, 2}, {1.0, 2.0, 3.0}, 0.0});
    mismatched.push_back(bad);
    CHECK_THROWS_AS(mil_train(mismatched, MilConfig{}), Error);
}

}  // TEST_SUITE
