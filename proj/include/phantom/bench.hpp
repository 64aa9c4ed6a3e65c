#pragma once

#include <optional>
#include <string>
#include <vector>

#include "phantom/attack.hpp"
#include "phantom/detector.hpp"

namespace phantom::bench {

// Fraction of reference detections matched one-to-one by a test detection
// of the same class with IoU >= iou_min (greedy, highest-confidence test
// entries first). Empty reference set: 1.0.
double recall(const std::vector<nms::Entry>& reference,
              const std::vector<nms::Entry>& test, real iou_min = real(0.5));

struct EvalRow {
    std::string image;   // dataset index, e.g. "000012"
    std::string variant; // "clean" or "perturbed"
    real epsilon = 0;
    real alpha = 0;
    int candidates_to_nms = 0;
    double total_ms = 0; // forward + filter + mean NMS
    double nms_ms = 0;   // mean over the timed iterations
    double recall = 1;   // vs the clean finals of the same image
};

struct Aggregates {
    double mean_total_ms = 0;
    double mean_nms_ms = 0;
    double mean_candidates = 0;
    double mean_recall = 1;
    int images = 0;
};

struct BenchReport {
    std::vector<EvalRow> rows;
    Aggregates clean, perturbed;
    // class ids of perturbed post-filter candidates, i.e. what floods NMS
    std::vector<std::size_t> class_histogram;
    int iterations = 0;
};

// Recomputes the per-variant aggregate from raw rows (report consumers can
// cross-check the stored aggregates against this).
Aggregates aggregate(const std::vector<EvalRow>& rows, const std::string& variant);

// Runs every image through the identical pipeline twice (clean, then with
// delta applied); NMS timing uses a warm-up plus `iterations` timed runs.
// Pass delta = nullptr for a clean-only report.
BenchReport evaluate(const det::ToyDetector& det, const std::vector<scene::Scene>& scenes,
                     const Tensor* delta, const atk::AttackParams& meta,
                     const nms::Params& nms_params, int iterations = 40);

std::string to_csv(const BenchReport& report);
std::string to_json(const BenchReport& report);

struct SweepPoint {
    real epsilon = 0;
    real alpha = 1;
    Tensor delta;
};

struct SweepRow {
    real epsilon = 0;
    real alpha = 1;
    double mean_candidates = 0;
    double mean_nms_ms = 0;
    double mean_total_ms = 0;
    double mean_recall = 1;
};

std::vector<SweepRow> sweep(const det::ToyDetector& det,
                            const std::vector<scene::Scene>& scenes,
                            const std::vector<SweepPoint>& points,
                            const nms::Params& nms_params, real conf_threshold,
                            int iterations = 40);

std::string sweep_csv(const std::vector<SweepRow>& rows);
// gnuplot-ready columns with the theoretical candidate ceiling as a header
// comment so plots can draw the saturation line
std::string sweep_dat(const std::vector<SweepRow>& rows, int candidate_ceiling);

struct Mitigation {
    std::string name;
    std::optional<std::size_t> candidate_cap;
    std::optional<double> time_budget_ms;
    std::optional<real> conf_threshold;
};

struct MitigationRow {
    std::string name;
    double mean_nms_ms = 0;
    double mean_total_ms = 0;
    double mean_candidates = 0;
    double mean_recall = 1;  // vs unmitigated clean finals
    double nms_time_saved_ms = 0; // vs the unmitigated perturbed run
    double recall_cost = 0;       // unmitigated perturbed recall - this recall
};

// First row is always the unmitigated baseline ("none"); the rest apply the
// given policies to the perturbed stream.
std::vector<MitigationRow> evaluate_mitigations(const det::ToyDetector& det,
                                                const std::vector<scene::Scene>& scenes,
                                                const Tensor& delta,
                                                const std::vector<Mitigation>& policies,
                                                const nms::Params& nms_params,
                                                real conf_threshold, int iterations = 40);

std::string mitigation_csv(const std::vector<MitigationRow>& rows);

} // namespace phantom::bench
