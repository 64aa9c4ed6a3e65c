#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "phantom/config.hpp"
#include "phantom/errors.hpp"

namespace phantom::nms {

struct Box {
    real x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

// One NMS input entry: argmax-class detection with a single confidence.
struct Entry {
    Box box;
    int class_id = 0;
    real confidence = 0;
    // position in the original candidate stream; also the sort tie-break
    int index = 0;
};

struct Params {
    real iou_threshold = real(0.45);
    // Mitigation toggles, both off by default. candidate_cap truncates the
    // input list in its arrival order before suppression runs (dropping
    // everything past the cap, which is the integrity cost of the defense).
    std::optional<int> candidate_cap;
    std::optional<double> time_budget_ms;
};

struct ClassStats {
    int kept = 0;
    int suppressed = 0;
};

struct Result {
    std::vector<Entry> kept;
    std::map<int, ClassStats> per_class;
    // set when time_budget_ms expired before the sweep finished
    bool truncated = false;
};

// intersection area / union area; 0 when the union is empty.
real iou(const Box& a, const Box& b);

// Greedy per-class suppression: sort by confidence descending (ties by
// ascending index), repeatedly keep the best remaining entry and discard
// same-class entries whose IoU with it exceeds the threshold.
Result suppress(std::span<const Entry> entries, const Params& params);

struct Timed {
    Result result;
    double mean_ns = 0;
    double stddev_ns = 0;
    int iterations = 0;
};

// Repeats suppress() and reports the mean wall time over `iterations`
// monotonic-clock runs after one discarded warm-up pass.
Timed timed_suppress(std::span<const Entry> entries, const Params& params,
                     int iterations = 40);

} // namespace phantom::nms
