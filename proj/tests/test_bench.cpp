#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "phantom/bench.hpp"

using namespace phantom;
using namespace phantom::bench;

namespace {

nms::Entry entry(real x1, real y1, real x2, real y2, int cls, real conf) {
    nms::Entry e;
    e.box = {x1, y1, x2, y2};
    e.class_id = cls;
    e.confidence = conf;
    e.index = 0;
    return e;
}

det::DetectorConfig tiny_config() {
    det::DetectorConfig cfg;
    cfg.image_size = 32;
    cfg.strides = {8, 16, 32};
    cfg.widths = {4, 4, 8, 8, 8};
    cfg.anchors_per_scale = 2;
    cfg.num_classes = 2;
    cfg.anchors = {{6, 10}, {14, 18}, {22, 28}};
    return cfg;
}

} // namespace

TEST_CASE("recall basics") {
    std::vector<nms::Entry> ref{entry(0, 0, 10, 10, 0, real(0.9)),
                                entry(20, 20, 30, 30, 1, real(0.8))};
    // perfect reproduction
    CHECK(recall(ref, ref) == doctest::Approx(1.0));
    // nothing found
    CHECK(recall(ref, {}) == doctest::Approx(0.0));
    // empty reference counts as fully recalled
    CHECK(recall({}, ref) == doctest::Approx(1.0));
    // one of two matched
    CHECK(recall(ref, {entry(0, 0, 10, 10, 0, real(0.5))}) == doctest::Approx(0.5));
    // class mismatch does not match
    CHECK(recall(ref, {entry(0, 0, 10, 10, 1, real(0.5))}) == doctest::Approx(0.0));
    // IoU below 0.5 does not match
    CHECK(recall(ref, {entry(8, 8, 18, 18, 0, real(0.5))}) == doctest::Approx(0.0));
}

TEST_CASE("recall matching is one-to-one") {
    std::vector<nms::Entry> ref{entry(0, 0, 10, 10, 0, real(0.9)),
                                entry(1, 1, 11, 11, 0, real(0.9))};
    // two test boxes, both overlapping both refs: each may claim only one
    std::vector<nms::Entry> test{entry(0, 0, 10, 10, 0, real(0.9)),
                                 entry(1, 1, 11, 11, 0, real(0.8))};
    CHECK(recall(ref, test) == doctest::Approx(1.0));
    // a single test box cannot satisfy both references
    CHECK(recall(ref, {entry(0, 0, 10, 10, 0, real(0.9))}) == doctest::Approx(0.5));
}

TEST_CASE("evaluate produces one clean and one perturbed row per image") {
    det::ToyDetector detector(tiny_config());
    detector.init_weights(3);
    scene::GenParams gp;
    gp.image_size = 32;
    auto scenes = scene::generate(21, 3, gp);
    Tensor delta = Tensor::full({3, 32, 32}, real(0.02));
    atk::AttackParams meta;
    meta.epsilon = 30;
    meta.alpha = real(0.8);

    BenchReport rep = evaluate(detector, scenes, &delta, meta, nms::Params{}, 5);
    REQUIRE(rep.rows.size() == 6);
    for (std::size_t i = 0; i < 3; ++i) {
        const EvalRow& c = rep.rows[2 * i];
        const EvalRow& p = rep.rows[2 * i + 1];
        CHECK(c.variant == "clean");
        CHECK(p.variant == "perturbed");
        CHECK(c.image == p.image);
        CHECK(c.epsilon == real(0));
        CHECK(p.epsilon == real(30));
        CHECK(c.recall == doctest::Approx(1.0));
        CHECK(p.recall >= 0);
        CHECK(p.recall <= 1);
        CHECK(c.total_ms >= c.nms_ms);
    }
    CHECK(rep.iterations == 5);
    CHECK(rep.class_histogram.size() == 2);
}

TEST_CASE("stored aggregates match a recomputation from rows") {
    det::ToyDetector detector(tiny_config());
    detector.init_weights(5);
    scene::GenParams gp;
    gp.image_size = 32;
    auto scenes = scene::generate(9, 2, gp);
    Tensor delta = Tensor::zeros({3, 32, 32});
    atk::AttackParams meta;
    BenchReport rep = evaluate(detector, scenes, &delta, meta, nms::Params{}, 3);

    Aggregates c = aggregate(rep.rows, "clean");
    Aggregates p = aggregate(rep.rows, "perturbed");
    CHECK(c.images == rep.clean.images);
    CHECK(c.mean_candidates == doctest::Approx(rep.clean.mean_candidates));
    CHECK(c.mean_recall == doctest::Approx(rep.clean.mean_recall));
    CHECK(p.mean_nms_ms == doctest::Approx(rep.perturbed.mean_nms_ms));
    // zero delta: the perturbed pass must reproduce the clean detections
    CHECK(rep.perturbed.mean_recall == doctest::Approx(1.0));
    CHECK(rep.perturbed.mean_candidates == doctest::Approx(rep.clean.mean_candidates));
}

TEST_CASE("csv layout") {
    BenchReport rep;
    rep.rows.push_back({"000000", "clean", 0, real(0.7), 12, 1.25, 0.5, 1.0});
    rep.rows.push_back({"000000", "perturbed", 30, real(0.7), 140, 3.5, 2.75, 0.5});
    std::string csv = to_csv(rep);
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    CHECK(line == "image,variant,epsilon,alpha,candidates_to_nms,total_ms,nms_ms,recall");
    std::getline(is, line);
    CHECK(line == "000000,clean,0.000000,0.700000,12,1.250000,0.500000,1.000000");
    std::getline(is, line);
    CHECK(line.substr(0, 17) == "000000,perturbed,");
    CHECK_FALSE(std::getline(is, line));
}

TEST_CASE("json report round trips through a parser") {
    det::ToyDetector detector(tiny_config());
    detector.init_weights(2);
    scene::GenParams gp;
    gp.image_size = 32;
    auto scenes = scene::generate(4, 1, gp);
    atk::AttackParams meta;
    BenchReport rep = evaluate(detector, scenes, nullptr, meta, nms::Params{}, 2);
    const std::string js = to_json(rep);
    CHECK(js.find("\"clean\"") != std::string::npos);
    CHECK(js.find("\"rows\"") != std::string::npos);
    CHECK(js.find("\"phantom_class_histogram\"") != std::string::npos);
}

TEST_CASE("sweep rows follow the points and the dat file carries the ceiling") {
    det::ToyDetector detector(tiny_config());
    detector.init_weights(7);
    scene::GenParams gp;
    gp.image_size = 32;
    auto scenes = scene::generate(3, 2, gp);

    std::vector<SweepPoint> pts;
    for (real eps : {real(5), real(30)}) {
        SweepPoint pt;
        pt.epsilon = eps;
        pt.alpha = 1;
        pt.delta = Tensor::full({3, 32, 32}, eps / 255 / 2);
        pts.push_back(pt);
    }
    auto rows = sweep(detector, scenes, pts, nms::Params{}, real(0.25), 2);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].epsilon == real(5));
    CHECK(rows[1].epsilon == real(30));
    for (const auto& r : rows) {
        CHECK(r.mean_candidates >= 0);
        CHECK(r.mean_recall >= 0);
    }
    const std::string dat = sweep_dat(rows, detector.config().candidate_count());
    CHECK(dat.find("# candidate_ceiling = 42") != std::string::npos);
    const std::string csv = sweep_csv(rows);
    CHECK(csv.substr(0, 8) == "epsilon,");
}

TEST_CASE("mitigation evaluation reports baseline plus one row per policy") {
    det::ToyDetector detector(tiny_config());
    detector.init_weights(7);
    scene::GenParams gp;
    gp.image_size = 32;
    auto scenes = scene::generate(15, 2, gp);
    Tensor delta = Tensor::full({3, 32, 32}, real(0.05));

    std::vector<Mitigation> policies;
    policies.push_back({"cap8", std::size_t(8), std::nullopt, std::nullopt});
    policies.push_back({"budget0", std::nullopt, 0.0, std::nullopt});
    policies.push_back({"thresh0.5", std::nullopt, std::nullopt, real(0.5)});

    auto rows = evaluate_mitigations(detector, scenes, delta, policies, nms::Params{},
                                     real(0.25), 3);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].name == "none");
    CHECK(rows[1].name == "cap8");
    CHECK(rows[1].mean_candidates <= 8.0);
    for (const auto& r : rows) {
        CHECK(r.mean_recall >= 0.0);
        CHECK(r.mean_recall <= 1.0);
    }
    // saved time + mitigated time must add back to the baseline
    for (std::size_t i = 1; i < rows.size(); ++i)
        CHECK(rows[i].nms_time_saved_ms ==
              doctest::Approx(rows[0].mean_nms_ms - rows[i].mean_nms_ms));
    const std::string csv = mitigation_csv(rows);
    CHECK(csv.find("policy,") == 0);
    CHECK(csv.find("cap8") != std::string::npos);
}
