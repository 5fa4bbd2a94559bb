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

#include "wsol/eval.hpp"
#include "wsol/rng.hpp"

using namespace wsol;

namespace {

/// Two-class dataset skeleton; images are 48x48, pixels unused by metrics.
Dataset make_gt(const std::vector<std::pair<std::vector<GtBox>, std::vector<uint8_t>>>& images) {
    Dataset ds;
    ds.num_classes = 2;
    int i = 0;
    for (const auto& [boxes, labels] : images) {
        LabeledImage img;
        img.id = "img" + std::to_string(i++);
        img.pixels = Image(48, 48, 0.f);
        img.labels = labels;
        img.gt_boxes = boxes;
        ds.images.push_back(std::move(img));
    }
    return ds;
}

Detection det(const std::string& id, int class_id, const Box& b, double score) {
    return Detection{id, b, class_id, score};
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("iou closed forms") {
    CHECK(iou(Box{0, 0, 10, 10}, Box{0, 0, 10, 10}) == doctest::Approx(1.0));
    CHECK(iou(Box{0, 0, 10, 10}, Box{20, 20, 30, 30}) == doctest::Approx(0.0));
    CHECK(iou(Box{0, 0, 10, 10}, Box{5, 0, 15, 10}) == doctest::Approx(1.0 / 3.0));
    CHECK(iou(Box{0, 0, 4, 4}, Box{2, 2, 6, 6}) == doctest::Approx(4.0 / 28.0));
}

TEST_CASE("corloc: hand cases, threshold inclusivity, warnings") {
    Dataset ds = make_gt({
        {{GtBox{0, Box{10, 10, 30, 30}}}, {1, 0}},
        {{GtBox{0, Box{5, 5, 25, 25}}}, {1, 0}},
        {{GtBox{0, Box{0, 0, 20, 20}}}, {1, 0}},
        {{}, {0, 0}},
    });

    SUBCASE("all correct -> 1.0") {
        std::map<std::string, Box> locs = {{"img0", Box{10, 10, 30, 30}},
                                           {"img1", Box{5, 5, 25, 25}},
                                           {"img2", Box{0, 0, 20, 20}}};
        CHECK(corloc(locs, ds, 0) == doctest::Approx(1.0));
    }
    SUBCASE("IoU exactly at the threshold counts as correct") {
        // [0,0,20,20] vs [0,10,20,30]: inter 200, union 600 -> exactly 1/3
        std::map<std::string, Box> locs = {{"img2", Box{0, 10, 20, 30}}};
        CHECK(corloc(locs, ds, 0, 1.0 / 3.0) == doctest::Approx(1.0 / 3.0));  // 1 of 3 positives
        CHECK(corloc(locs, ds, 0, 1.0 / 3.0 + 1e-9) == doctest::Approx(0.0));
    }
    SUBCASE("2 of 3 positives -> 2/3; prediction on a negative image warns") {
        std::map<std::string, Box> locs = {{"img0", Box{10, 10, 30, 30}},
                                           {"img1", Box{5, 5, 25, 25}},
                                           {"img2", Box{30, 30, 44, 44}},
                                           {"img3", Box{0, 0, 10, 10}}};
        int ignored = 0;
        CHECK(corloc(locs, ds, 0, 0.5, &ignored) == doctest::Approx(2.0 / 3.0));
        CHECK(ignored == 1);
    }
}

TEST_CASE("corloc_at_m falls back to corloc at M=1 and is monotone in M") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        // random scene with one class-0 gt per positive image
        std::vector<std::pair<std::vector<GtBox>, std::vector<uint8_t>>> scenes;
        int images = 3 + rng.uniform_int(4);
        for (int i = 0; i < images; ++i) {
            Box g{rng.uniform_int(0, 20), rng.uniform_int(0, 20), 0, 0};
            g.x2 = g.x1 + 10 + rng.uniform_int(10);
            g.y2 = g.y1 + 10 + rng.uniform_int(10);
            scenes.push_back({{GtBox{0, g}}, {1, 0}});
        }
        Dataset ds = make_gt(scenes);

        std::map<std::string, std::vector<Box>> ranked;
        std::map<std::string, Box> top1;
        for (const auto& img : ds.images) {
            std::vector<Box> boxes;
            int count = 1 + rng.uniform_int(6);
            for (int j = 0; j < count; ++j) {
                Box b{rng.uniform_int(0, 24), rng.uniform_int(0, 24), 0, 0};
                b.x2 = b.x1 + 8 + rng.uniform_int(14);
                b.y2 = b.y1 + 8 + rng.uniform_int(14);
                boxes.push_back(b);
            }
            top1[img.id] = boxes.front();
            ranked[img.id] = std::move(boxes);
        }
        CHECK(corloc_at_m(ranked, ds, 0, 1, 0.5) == doctest::Approx(corloc(top1, ds, 0, 0.5)));

        double prev = 0.0;
        for (int m = 1; m <= 8; ++m) {
            double v = corloc_at_m(ranked, ds, 0, m, 0.5);
            CHECK(v >= prev - 1e-12);
            prev = v;
        }
        double rprev = 0.0;
        for (int m = 1; m <= 8; ++m) {
            double v = recall_at_m(ranked, ds, 0, m, 0.5);
            CHECK(v >= rprev - 1e-12);
            rprev = v;
        }
    }
    Dataset ds = make_gt({{{GtBox{0, Box{0, 0, 10, 10}}}, {1, 0}}});
    CHECK_THROWS_AS(corloc_at_m({}, ds, 0, 0, 0.5), Error);
}

TEST_CASE("recall_at_m greedy matching on a hand-built two-image case") {
    Dataset ds = make_gt({
        {{GtBox{0, Box{0, 0, 10, 10}}, GtBox{0, Box{20, 20, 30, 30}}}, {1, 0}},
        {{GtBox{0, Box{5, 5, 15, 15}}}, {1, 0}},
    });
    std::map<std::string, std::vector<Box>> ranked;
    // img0: first proposal covers gt A; second covers gt B only at rank 2
    ranked["img0"] = {Box{0, 0, 10, 10}, Box{40, 40, 44, 44}, Box{20, 20, 30, 30}};
    ranked["img1"] = {Box{30, 30, 40, 40}};  // miss

    CHECK(recall_at_m(ranked, ds, 0, 1, 0.5) == doctest::Approx(1.0 / 3.0));
    CHECK(recall_at_m(ranked, ds, 0, 2, 0.5) == doctest::Approx(1.0 / 3.0));
    CHECK(recall_at_m(ranked, ds, 0, 3, 0.5) == doctest::Approx(2.0 / 3.0));

    // one proposal cannot claim two gt boxes
    std::map<std::string, std::vector<Box>> greedy;
    greedy["img0"] = {Box{0, 0, 10, 10}};
    Dataset twin = make_gt({{{GtBox{0, Box{0, 0, 10, 10}}, GtBox{0, Box{0, 0, 10, 10}}}, {1, 0}}});
    CHECK(recall_at_m(greedy, twin, 0, 5, 0.5) == doctest::Approx(0.5));
}

TEST_CASE("average precision: trivial cases and the 5/6 PR-curve oracle") {
    SUBCASE("one gt, one matching detection -> AP 1.0") {
        Dataset ds = make_gt({{{GtBox{0, Box{10, 10, 30, 30}}}, {1, 0}}});
        auto ap = average_precision({det("img0", 0, Box{10, 10, 30, 30}, 0.9)}, ds, 0);
        REQUIRE(ap.has_value());
        CHECK(*ap == doctest::Approx(1.0));
    }
    SUBCASE("one gt, IoU 0.4 detection -> AP 0.0") {
        Dataset ds = make_gt({{{GtBox{0, Box{0, 0, 20, 20}}}, {1, 0}}});
        Box off{0, 12, 20, 32};  // IoU = 160/640 = 0.25 < 0.5
        auto ap = average_precision({det("img0", 0, off, 0.9)}, ds, 0);
        REQUIRE(ap.has_value());
        CHECK(*ap == doctest::Approx(0.0));
    }
    SUBCASE("hand-built PR curve: TP .9, FP .8, TP .7 over 2 gt -> 5/6") {
        Dataset ds = make_gt({
            {{GtBox{0, Box{0, 0, 10, 10}}, GtBox{0, Box{20, 20, 30, 30}}}, {1, 0}},
        });
        std::vector<Detection> dets = {
            det("img0", 0, Box{0, 0, 10, 10}, 0.9),    // TP
            det("img0", 0, Box{35, 35, 45, 45}, 0.8),  // FP
            det("img0", 0, Box{20, 20, 30, 30}, 0.7),  // TP
        };
        std::vector<std::pair<double, double>> curve;
        auto ap = average_precision(dets, ds, 0, 0.5, ApInterpolation::AllPoints, &curve);
        REQUIRE(ap.has_value());
        CHECK(*ap == doctest::Approx(5.0 / 6.0));
        REQUIRE(curve.size() == 3);
        CHECK(curve[0] == std::pair<double, double>{0.5, 1.0});
        CHECK(curve[2].first == doctest::Approx(1.0));
        CHECK(curve[2].second == doctest::Approx(2.0 / 3.0));
    }
    SUBCASE("duplicate hit on a claimed gt is a false positive") {
        Dataset ds = make_gt({{{GtBox{0, Box{0, 0, 10, 10}}}, {1, 0}}});
        std::vector<Detection> dets = {det("img0", 0, Box{0, 0, 10, 10}, 0.9),
                                       det("img0", 0, Box{0, 0, 10, 10}, 0.8)};
        auto ap = average_precision(dets, ds, 0);
        CHECK(*ap == doctest::Approx(1.0));  // envelope unaffected by trailing FP
        std::vector<std::pair<double, double>> curve;
        average_precision(dets, ds, 0, 0.5, ApInterpolation::AllPoints, &curve);
        CHECK(curve[1].second == doctest::Approx(0.5));  // second det counted FP
    }
    SUBCASE("class without gt is undefined and excluded from mAP") {
        Dataset ds = make_gt({{{GtBox{0, Box{0, 0, 10, 10}}}, {1, 0}}});
        CHECK_FALSE(average_precision({}, ds, 1).has_value());
        int skipped = 0;
        double map = mean_ap({det("img0", 0, Box{0, 0, 10, 10}, 0.9)}, ds, 0.5, ApInterpolation::AllPoints, &skipped);
        CHECK(skipped == 1);
        CHECK(map == doctest::Approx(1.0));
    }
    SUBCASE("AP is invariant under strictly monotone score transforms") {
        Dataset ds = make_gt({
            {{GtBox{0, Box{0, 0, 10, 10}}, GtBox{0, Box{20, 20, 30, 30}}}, {1, 0}},
            {{GtBox{0, Box{8, 8, 24, 24}}}, {1, 0}},
        });
        Rng rng(9);
        std::vector<Detection> dets;
        for (int i = 0; i < 25; ++i) {
            Box b{rng.uniform_int(0, 30), rng.uniform_int(0, 30), 0, 0};
            b.x2 = b.x1 + 6 + rng.uniform_int(18);
            b.y2 = b.y1 + 6 + rng.uniform_int(18);
            dets.push_back(det(rng.uniform_int(2) ? "img0" : "img1", 0, b, rng.uniform()));
        }
        auto base = average_precision(dets, ds, 0);
        std::vector<Detection> squashed = dets;
        for (auto& d : squashed) d.score = std::tanh(3.0 * d.score) + 2.0;  // strictly monotone
        auto transformed = average_precision(squashed, ds, 0);
        CHECK(*base == doctest::Approx(*transformed).epsilon(1e-12));
    }
    SUBCASE("appending a lowest-score zero-overlap FP never increases AP") {
        Dataset ds = make_gt({{{GtBox{0, Box{0, 0, 10, 10}}}, {1, 0}}});
        std::vector<Detection> dets = {det("img0", 0, Box{0, 0, 10, 10}, 0.9),
                                       det("img0", 0, Box{30, 30, 40, 40}, 0.5)};
        auto with_fp = average_precision(dets, ds, 0);
        dets.pop_back();
        auto without = average_precision(dets, ds, 0);
        CHECK(*with_fp <= *without + 1e-12);
    }
    SUBCASE("11-point variant on the 5/6 case") {
        Dataset ds = make_gt({
            {{GtBox{0, Box{0, 0, 10, 10}}, GtBox{0, Box{20, 20, 30, 30}}}, {1, 0}},
        });
        std::vector<Detection> dets = {
            det("img0", 0, Box{0, 0, 10, 10}, 0.9),
            det("img0", 0, Box{35, 35, 45, 45}, 0.8),
            det("img0", 0, Box{20, 20, 30, 30}, 0.7),
        };
        // envelope: precision 1.0 for r<=0.5, 2/3 up to 1.0 -> (6*1 + 5*(2/3))/11
        auto ap = average_precision(dets, ds, 0, 0.5, ApInterpolation::ElevenPoint);
        CHECK(*ap == doctest::Approx((6.0 + 5.0 * 2.0 / 3.0) / 11.0));
    }
}

TEST_CASE("error analysis: categories, exclusivity, Cor == TP") {
    EvalConfig cfg;
    cfg.similar_groups = {{0, 1}};  // the two classes confuse each other

    Dataset ds = make_gt({
        {{GtBox{0, Box{0, 0, 20, 20}}, GtBox{1, Box{28, 28, 44, 44}}}, {1, 1}},
    });

    SUBCASE("canonical one-of-each") {
        std::vector<Detection> dets = {
            det("img0", 0, Box{0, 0, 20, 20}, 0.95),    // Cor
            det("img0", 0, Box{0, 10, 20, 30}, 0.90),   // same class, IoU 1/3 -> Loc
            det("img0", 0, Box{28, 28, 44, 44}, 0.85),  // class-1 gt overlap -> Sim
            det("img0", 0, Box{0, 30, 10, 40}, 0.80),   // nothing -> BG
        };
        ErrorBreakdown b = error_analysis(dets, ds, cfg);
        CHECK(b.count(0, ErrorBreakdown::Cor) == 1);
        CHECK(b.count(0, ErrorBreakdown::Loc) == 1);
        CHECK(b.count(0, ErrorBreakdown::Sim) == 1);
        CHECK(b.count(0, ErrorBreakdown::BG) == 1);
        CHECK(b.total() == 4);
    }
    SUBCASE("without similar grouping the cross-class overlap becomes Oth") {
        EvalConfig singleton = cfg;
        singleton.similar_groups.clear();
        std::vector<Detection> dets = {det("img0", 0, Box{28, 28, 44, 44}, 0.85)};
        ErrorBreakdown b = error_analysis(dets, ds, singleton);
        CHECK(b.count(0, ErrorBreakdown::Oth) == 1);
        CHECK(b.count(0, ErrorBreakdown::Sim) == 0);
    }
    SUBCASE("duplicate of a claimed gt counts as Loc, not Cor") {
        std::vector<Detection> dets = {det("img0", 0, Box{0, 0, 20, 20}, 0.95),
                                       det("img0", 0, Box{0, 0, 20, 20}, 0.90)};
        ErrorBreakdown b = error_analysis(dets, ds, cfg);
        CHECK(b.count(0, ErrorBreakdown::Cor) == 1);
        CHECK(b.count(0, ErrorBreakdown::Loc) == 1);
    }
    SUBCASE("Cor equals the AP pipeline's TP count on random inputs") {
        Rng rng(41);
        Dataset big = make_gt({
            {{GtBox{0, Box{0, 0, 16, 16}}, GtBox{1, Box{24, 24, 44, 44}}}, {1, 1}},
            {{GtBox{0, Box{8, 8, 28, 28}}}, {1, 0}},
            {{GtBox{1, Box{4, 20, 24, 40}}}, {0, 1}},
        });
        std::vector<Detection> dets;
        for (int i = 0; i < 120; ++i) {
            Box b{rng.uniform_int(0, 32), rng.uniform_int(0, 32), 0, 0};
            b.x2 = b.x1 + 6 + rng.uniform_int(16);
            b.y2 = b.y1 + 6 + rng.uniform_int(16);
            dets.push_back(det("img" + std::to_string(rng.uniform_int(3)), rng.uniform_int(2), b, rng.uniform()));
        }
        ErrorBreakdown b = error_analysis(dets, big, cfg);
        CHECK(b.total() == static_cast<long long>(dets.size()));  // exhaustive

        for (int c = 0; c < 2; ++c) {
            std::vector<std::pair<double, double>> curve;
            average_precision(dets, big, c, 0.5, ApInterpolation::AllPoints, &curve);
            long long tp = 0;
            if (!curve.empty()) {
                // recover the final TP count from the last PR point
                long long total_gt = 0;
                for (const auto& img : big.images)
                    for (const auto& g : img.gt_boxes)
                        if (g.class_id == c) ++total_gt;
                tp = std::llround(curve.back().first * total_gt);
            }
            CHECK(b.count(c, ErrorBreakdown::Cor) == tp);
        }
    }
}

}  // TEST_SUITE
