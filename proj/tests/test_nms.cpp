#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "phantom/nms.hpp"

using namespace phantom;
using namespace phantom::nms;

namespace {

// Independent O(n^2) reference: an entry survives iff no higher-priority
// surviving entry of the same class overlaps it past the threshold. Written
// against the textbook definition, not the production code path.
std::vector<Entry> brute_force_nms(const std::vector<Entry>& in, real thresh) {
    std::vector<const Entry*> sorted;
    for (const Entry& e : in) sorted.push_back(&e);
    std::stable_sort(sorted.begin(), sorted.end(), [](const Entry* a, const Entry* b) {
        if (a->confidence != b->confidence) return a->confidence > b->confidence;
        return a->index < b->index;
    });
    std::vector<const Entry*> kept;
    for (const Entry* e : sorted) {
        bool survives = true;
        for (const Entry* k : kept)
            if (k->class_id == e->class_id && iou(k->box, e->box) > thresh) {
                survives = false;
                break;
            }
        if (survives) kept.push_back(e);
    }
    std::vector<Entry> out;
    for (const Entry* e : kept) out.push_back(*e);
    return out;
}

std::vector<Entry> random_entries(std::mt19937_64& g, int n, int num_classes) {
    std::uniform_real_distribution<double> coord(0, 150), size(2, 40), conf(0.01, 0.99);
    std::uniform_int_distribution<int> cls(0, num_classes - 1);
    std::vector<Entry> out(n);
    for (int i = 0; i < n; ++i) {
        const real x = real(coord(g)), y = real(coord(g));
        out[i].box = {x, y, x + real(size(g)), y + real(size(g))};
        out[i].class_id = cls(g);
        out[i].confidence = real(conf(g));
        out[i].index = i;
    }
    return out;
}

bool same_kept(const std::vector<Entry>& a, const std::vector<Entry>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].index != b[i].index) return false;
    return true;
}

} // namespace

TEST_CASE("iou basics") {
    Box a{0, 0, 2, 2};
    CHECK(iou(a, a) == doctest::Approx(1.0));
    CHECK(iou(a, Box{5, 5, 7, 7}) == doctest::Approx(0.0));
    CHECK(iou(a, Box{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0));
    // degenerate zero-area boxes
    CHECK(iou(Box{1, 1, 1, 1}, Box{1, 1, 1, 1}) == 0);
}

TEST_CASE("greedy selection basics") {
    Params p;
    std::vector<Entry> two = {
        {{0, 0, 10, 10}, 0, real(0.9), 0},
        {{0, 0, 10, 10}, 0, real(0.8), 1},
    };
    auto r = suppress(two, p);
    REQUIRE(r.kept.size() == 1);
    CHECK(r.kept[0].confidence == real(0.9));
    CHECK(r.per_class[0].suppressed == 1);

    // fully overlapping boxes of different classes both survive
    two[1].class_id = 1;
    r = suppress(two, p);
    CHECK(r.kept.size() == 2);
}

TEST_CASE("matches brute-force reference on 1000 seeded trials") {
    std::mt19937_64 g(20'26);
    std::uniform_int_distribution<int> count(0, 200);
    Params p;
    for (int trial = 0; trial < 1000; ++trial) {
        auto entries = random_entries(g, count(g), 4);
        auto fast = suppress(entries, p).kept;
        auto ref = brute_force_nms(entries, p.iou_threshold);
        REQUIRE(same_kept(fast, ref));
    }
}

TEST_CASE("kept set invariants") {
    std::mt19937_64 g(7);
    Params p;
    for (int trial = 0; trial < 50; ++trial) {
        auto entries = random_entries(g, 120, 4);
        auto r = suppress(entries, p);
        // subset of input
        std::set<int> in_idx;
        for (auto& e : entries) in_idx.insert(e.index);
        for (auto& k : r.kept) CHECK(in_idx.count(k.index) == 1);
        // no same-class pair above threshold
        for (std::size_t i = 0; i < r.kept.size(); ++i)
            for (std::size_t j = i + 1; j < r.kept.size(); ++j)
                if (r.kept[i].class_id == r.kept[j].class_id)
                    CHECK(iou(r.kept[i].box, r.kept[j].box) <= p.iou_threshold);
        // idempotence on its own output
        auto again = suppress(r.kept, p);
        CHECK(same_kept(again.kept, r.kept));
    }
}

TEST_CASE("equal confidences order by ascending original index") {
    Params p;
    std::vector<Entry> ties = {
        {{40, 40, 50, 50}, 0, real(0.5), 0},
        {{0, 0, 10, 10}, 0, real(0.5), 1},
        {{20, 20, 30, 30}, 0, real(0.5), 2},
    };
    auto r = suppress(ties, p);
    REQUIRE(r.kept.size() == 3);
    CHECK(r.kept[0].index == 0);
    CHECK(r.kept[1].index == 1);
    CHECK(r.kept[2].index == 2);
}

TEST_CASE("candidate cap truncates the input in arrival order") {
    std::mt19937_64 g(9);
    auto entries = random_entries(g, 80, 4);
    Params p;
    Params capped = p;
    capped.candidate_cap = 30;
    auto r = suppress(entries, capped);
    auto ref = suppress(std::span<const Entry>(entries.data(), 30), p);
    CHECK(same_kept(r.kept, ref.kept));
    CHECK(int(r.kept.size()) <= 30);

    // cap >= input size behaves exactly like no cap
    capped.candidate_cap = 500;
    CHECK(same_kept(suppress(entries, capped).kept, suppress(entries, p).kept));

    capped.candidate_cap = 1;
    CHECK(suppress(entries, capped).kept.size() == 1);
}

TEST_CASE("time budget zero flags truncation") {
    std::mt19937_64 g(11);
    auto entries = random_entries(g, 50, 2);
    Params p;
    p.time_budget_ms = 0.0;
    auto r = suppress(entries, p);
    CHECK(r.truncated);
    CHECK(r.kept.size() < entries.size());
}

TEST_CASE("timed_suppress protocol") {
    std::mt19937_64 g(13);
    auto entries = random_entries(g, 100, 4);
    Params p;
    auto t = timed_suppress(entries, p, 40);
    CHECK(t.iterations == 40);
    CHECK(t.mean_ns >= 0);
    CHECK(same_kept(t.result.kept, suppress(entries, p).kept));

    std::vector<Entry> empty;
    auto te = timed_suppress(empty, p, 5);
    CHECK(te.result.kept.empty());
    CHECK(te.mean_ns >= 0);
}

TEST_CASE("mean time grows with disjoint single-class candidate count") {
    // worst case: nothing suppressed, one class
    auto make = [](int n) {
        std::vector<Entry> out(n);
        for (int i = 0; i < n; ++i) {
            const real x = real(3 * i);
            out[i].box = {x, 0, x + 2, 2};
            out[i].class_id = 0;
            out[i].confidence = real(0.5) + real(i % 97) / 1000;
            out[i].index = i;
        }
        return out;
    };
    Params p;
    const auto t100 = timed_suppress(make(100), p, 10);
    const auto t1k = timed_suppress(make(1000), p, 10);
    const auto t10k = timed_suppress(make(10000), p, 10);
    CHECK(t100.mean_ns <= t1k.mean_ns);
    CHECK(t1k.mean_ns <= t10k.mean_ns);
}

TEST_CASE("parameter validation") {
    std::vector<Entry> none;
    Params p;
    p.iou_threshold = real(1.5);
    CHECK_THROWS_AS(suppress(none, p), ValueError);
    p = Params{};
    p.candidate_cap = 0;
    CHECK_THROWS_AS(suppress(none, p), ValueError);
    CHECK_THROWS_AS(timed_suppress(none, Params{}, 0), ValueError);
}
