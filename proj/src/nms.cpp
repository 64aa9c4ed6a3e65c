#include "phantom/nms.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "phantom/errors.hpp"

namespace phantom::nms {

real iou(const Box& a, const Box& b) {
    const real ix1 = std::max(a.x1, b.x1);
    const real iy1 = std::max(a.y1, b.y1);
    const real ix2 = std::min(a.x2, b.x2);
    const real iy2 = std::min(a.y2, b.y2);
    const real iw = std::max(real(0), ix2 - ix1);
    const real ih = std::max(real(0), iy2 - iy1);
    const real inter = iw * ih;
    const real area_a = std::max(real(0), a.x2 - a.x1) * std::max(real(0), a.y2 - a.y1);
    const real area_b = std::max(real(0), b.x2 - b.x1) * std::max(real(0), b.y2 - b.y1);
    const real uni = area_a + area_b - inter;
    return uni > 0 ? inter / uni : real(0);
}

Result suppress(std::span<const Entry> entries, const Params& params) {
    if (params.iou_threshold <= 0 || params.iou_threshold >= 1)
        throw ValueError("nms: iou_threshold must lie in (0,1)");
    if (params.candidate_cap && *params.candidate_cap <= 0)
        throw ValueError("nms: candidate_cap must be positive");

    const std::size_t n = params.candidate_cap
                              ? std::min(entries.size(), std::size_t(*params.candidate_cap))
                              : entries.size();

    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = int(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (entries[a].confidence != entries[b].confidence)
            return entries[a].confidence > entries[b].confidence;
        return entries[a].index < entries[b].index;
    });

    const auto start = std::chrono::steady_clock::now();
    Result res;
    std::vector<char> dead(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (params.time_budget_ms) {
            const double elapsed =
                std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - start)
                    .count();
            if (elapsed > *params.time_budget_ms) {
                res.truncated = true;
                break;
            }
        }
        if (dead[i]) continue;
        const Entry& top = entries[order[i]];
        res.kept.push_back(top);
        res.per_class[top.class_id].kept += 1;
        for (std::size_t j = i + 1; j < n; ++j) {
            if (dead[j]) continue;
            const Entry& other = entries[order[j]];
            if (other.class_id != top.class_id) continue;
            if (iou(top.box, other.box) > params.iou_threshold) {
                dead[j] = 1;
                res.per_class[top.class_id].suppressed += 1;
            }
        }
    }
    return res;
}

Timed timed_suppress(std::span<const Entry> entries, const Params& params,
                     int iterations) {
    if (iterations < 1) throw ValueError("timed_suppress: iterations must be >= 1");
    Timed out;
    out.iterations = iterations;
    out.result = suppress(entries, params); // warm-up, result reused
    double sum = 0, sumsq = 0;
    for (int i = 0; i < iterations; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Result r = suppress(entries, params);
        const auto t1 = std::chrono::steady_clock::now();
        const double ns = std::chrono::duration<double, std::nano>(t1 - t0).count();
        sum += ns;
        sumsq += ns * ns;
        out.result = std::move(r);
    }
    out.mean_ns = sum / iterations;
    const double var = std::max(0.0, sumsq / iterations - out.mean_ns * out.mean_ns);
    out.stddev_ns = std::sqrt(var);
    return out;
}

} // namespace phantom::nms
