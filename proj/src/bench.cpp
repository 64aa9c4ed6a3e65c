#include "phantom/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace phantom::bench {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

struct ImageRun {
    std::vector<nms::Entry> entries; // post-filter
    nms::Result nms;
    double forward_filter_ms = 0;
    double nms_ms = 0; // mean over timed iterations
};

ImageRun run_image(const det::ToyDetector& det, const Tensor& image,
                   const nms::Params& np, real conf_threshold, int iterations) {
    ImageRun r;
    auto t0 = Clock::now();
    Tape tape;
    det::Candidates c = det.forward(tape, image);
    r.entries = det::filter_candidates(c, conf_threshold);
    r.forward_filter_ms = ms_since(t0);
    nms::Timed timed = nms::timed_suppress(r.entries, np, iterations);
    r.nms = std::move(timed.result);
    r.nms_ms = timed.mean_ns / 1e6;
    return r;
}

} // namespace

double recall(const std::vector<nms::Entry>& reference,
              const std::vector<nms::Entry>& test, real iou_min) {
    if (reference.empty()) return 1.0;
    std::vector<std::size_t> order(test.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return test[a].confidence > test[b].confidence;
    });
    std::vector<bool> used(reference.size(), false);
    int matched = 0;
    for (std::size_t ti : order) {
        int best = -1;
        real best_iou = iou_min;
        for (std::size_t ri = 0; ri < reference.size(); ++ri) {
            if (used[ri] || reference[ri].class_id != test[ti].class_id) continue;
            const real v = nms::iou(reference[ri].box, test[ti].box);
            if (v >= best_iou && (best < 0 || v > best_iou)) {
                best_iou = v;
                best = int(ri);
            }
        }
        if (best >= 0) {
            used[std::size_t(best)] = true;
            ++matched;
        }
    }
    return double(matched) / double(reference.size());
}

Aggregates aggregate(const std::vector<EvalRow>& rows, const std::string& variant) {
    Aggregates a;
    a.mean_recall = 0;
    for (const auto& r : rows) {
        if (r.variant != variant) continue;
        a.mean_total_ms += r.total_ms;
        a.mean_nms_ms += r.nms_ms;
        a.mean_candidates += r.candidates_to_nms;
        a.mean_recall += r.recall;
        a.images += 1;
    }
    if (a.images > 0) {
        a.mean_total_ms /= a.images;
        a.mean_nms_ms /= a.images;
        a.mean_candidates /= a.images;
        a.mean_recall /= a.images;
    } else {
        a.mean_recall = 1;
    }
    return a;
}

BenchReport evaluate(const det::ToyDetector& det, const std::vector<scene::Scene>& scenes,
                     const Tensor* delta, const atk::AttackParams& meta,
                     const nms::Params& nms_params, int iterations) {
    if (scenes.empty()) throw ValueError("evaluate: empty dataset");
    BenchReport report;
    report.iterations = iterations;
    report.class_histogram.assign(std::size_t(det.config().num_classes), 0);

    char name[16];
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        std::snprintf(name, sizeof(name), "%06zu", i);
        ImageRun clean = run_image(det, scenes[i].image, nms_params,
                                   meta.conf_threshold, iterations);
        EvalRow row;
        row.image = name;
        row.variant = "clean";
        row.epsilon = 0;
        row.alpha = meta.alpha;
        row.candidates_to_nms = int(clean.entries.size());
        row.nms_ms = clean.nms_ms;
        row.total_ms = clean.forward_filter_ms + clean.nms_ms;
        row.recall = 1.0;
        report.rows.push_back(row);

        if (delta) {
            ImageRun pert = run_image(det, atk::apply(scenes[i].image, *delta),
                                      nms_params, meta.conf_threshold, iterations);
            EvalRow prow;
            prow.image = name;
            prow.variant = "perturbed";
            prow.epsilon = meta.epsilon;
            prow.alpha = meta.alpha;
            prow.candidates_to_nms = int(pert.entries.size());
            prow.nms_ms = pert.nms_ms;
            prow.total_ms = pert.forward_filter_ms + pert.nms_ms;
            prow.recall = recall(clean.nms.kept, pert.nms.kept);
            report.rows.push_back(prow);
            for (const auto& e : pert.entries)
                report.class_histogram[std::size_t(e.class_id)] += 1;
        }
    }
    report.clean = aggregate(report.rows, "clean");
    report.perturbed = aggregate(report.rows, "perturbed");
    return report;
}

std::string to_csv(const BenchReport& report) {
    std::ostringstream os;
    os << "image,variant,epsilon,alpha,candidates_to_nms,total_ms,nms_ms,recall\n";
    for (const auto& r : report.rows)
        os << r.image << "," << r.variant << "," << fmt(r.epsilon) << ","
           << fmt(r.alpha) << "," << r.candidates_to_nms << "," << fmt(r.total_ms)
           << "," << fmt(r.nms_ms) << "," << fmt(r.recall) << "\n";
    return os.str();
}

std::string to_json(const BenchReport& report) {
    nlohmann::json j;
    j["iterations"] = report.iterations;
    auto agg = [](const Aggregates& a) {
        return nlohmann::json{{"mean_total_ms", a.mean_total_ms},
                              {"mean_nms_ms", a.mean_nms_ms},
                              {"mean_candidates", a.mean_candidates},
                              {"mean_recall", a.mean_recall},
                              {"images", a.images}};
    };
    j["clean"] = agg(report.clean);
    j["perturbed"] = agg(report.perturbed);
    j["phantom_class_histogram"] = report.class_histogram;
    auto& rows = j["rows"] = nlohmann::json::array();
    for (const auto& r : report.rows)
        rows.push_back({{"image", r.image},
                        {"variant", r.variant},
                        {"epsilon", r.epsilon},
                        {"alpha", r.alpha},
                        {"candidates_to_nms", r.candidates_to_nms},
                        {"total_ms", r.total_ms},
                        {"nms_ms", r.nms_ms},
                        {"recall", r.recall}});
    return j.dump(2) + "\n";
}

std::vector<SweepRow> sweep(const det::ToyDetector& det,
                            const std::vector<scene::Scene>& scenes,
                            const std::vector<SweepPoint>& points,
                            const nms::Params& nms_params, real conf_threshold,
                            int iterations) {
    std::vector<SweepRow> out;
    atk::AttackParams meta;
    meta.conf_threshold = conf_threshold;
    for (const auto& pt : points) {
        meta.epsilon = pt.epsilon;
        meta.alpha = pt.alpha;
        BenchReport rep = evaluate(det, scenes, &pt.delta, meta, nms_params, iterations);
        SweepRow row;
        row.epsilon = pt.epsilon;
        row.alpha = pt.alpha;
        row.mean_candidates = rep.perturbed.mean_candidates;
        row.mean_nms_ms = rep.perturbed.mean_nms_ms;
        row.mean_total_ms = rep.perturbed.mean_total_ms;
        row.mean_recall = rep.perturbed.mean_recall;
        out.push_back(row);
    }
    return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "epsilon,alpha,mean_candidates,mean_nms_ms,mean_total_ms,mean_recall\n";
    for (const auto& r : rows)
        os << fmt(r.epsilon) << "," << fmt(r.alpha) << "," << fmt(r.mean_candidates)
           << "," << fmt(r.mean_nms_ms) << "," << fmt(r.mean_total_ms) << ","
           << fmt(r.mean_recall) << "\n";
    return os.str();
}

std::string sweep_dat(const std::vector<SweepRow>& rows, int candidate_ceiling) {
    std::ostringstream os;
    os << "# candidate_ceiling = " << candidate_ceiling << "\n";
    os << "# epsilon alpha mean_candidates mean_nms_ms mean_total_ms mean_recall\n";
    for (const auto& r : rows)
        os << fmt(r.epsilon) << " " << fmt(r.alpha) << " " << fmt(r.mean_candidates)
           << " " << fmt(r.mean_nms_ms) << " " << fmt(r.mean_total_ms) << " "
           << fmt(r.mean_recall) << "\n";
    return os.str();
}

std::vector<MitigationRow> evaluate_mitigations(const det::ToyDetector& det,
                                                const std::vector<scene::Scene>& scenes,
                                                const Tensor& delta,
                                                const std::vector<Mitigation>& policies,
                                                const nms::Params& nms_params,
                                                real conf_threshold, int iterations) {
    if (scenes.empty()) throw ValueError("evaluate_mitigations: empty dataset");

    // clean finals under the unmitigated pipeline are the recall reference
    std::vector<std::vector<nms::Entry>> clean_finals;
    std::vector<Tensor> perturbed_images;
    clean_finals.reserve(scenes.size());
    for (const auto& sc : scenes) {
        ImageRun clean = run_image(det, sc.image, nms_params, conf_threshold, 1);
        clean_finals.push_back(clean.nms.kept);
        perturbed_images.push_back(atk::apply(sc.image, delta));
    }

    auto measure = [&](const nms::Params& np, real thr, const std::string& name) {
        MitigationRow row;
        row.name = name;
        row.mean_recall = 0;
        for (std::size_t i = 0; i < scenes.size(); ++i) {
            ImageRun r = run_image(det, perturbed_images[i], np, thr, iterations);
            row.mean_nms_ms += r.nms_ms;
            row.mean_total_ms += r.forward_filter_ms + r.nms_ms;
            row.mean_candidates += double(std::min<std::size_t>(
                r.entries.size(), np.candidate_cap.value_or(r.entries.size())));
            row.mean_recall += recall(clean_finals[i], r.nms.kept);
        }
        const double n = double(scenes.size());
        row.mean_nms_ms /= n;
        row.mean_total_ms /= n;
        row.mean_candidates /= n;
        row.mean_recall /= n;
        return row;
    };

    std::vector<MitigationRow> out;
    out.push_back(measure(nms_params, conf_threshold, "none"));
    for (const auto& m : policies) {
        nms::Params np = nms_params;
        if (m.candidate_cap) np.candidate_cap = *m.candidate_cap;
        if (m.time_budget_ms) np.time_budget_ms = *m.time_budget_ms;
        MitigationRow row =
            measure(np, m.conf_threshold.value_or(conf_threshold), m.name);
        row.nms_time_saved_ms = out[0].mean_nms_ms - row.mean_nms_ms;
        row.recall_cost = out[0].mean_recall - row.mean_recall;
        out.push_back(row);
    }
    return out;
}

std::string mitigation_csv(const std::vector<MitigationRow>& rows) {
    std::ostringstream os;
    os << "policy,mean_candidates,mean_nms_ms,mean_total_ms,mean_recall,"
          "nms_time_saved_ms,recall_cost\n";
    for (const auto& r : rows)
        os << r.name << "," << fmt(r.mean_candidates) << "," << fmt(r.mean_nms_ms)
           << "," << fmt(r.mean_total_ms) << "," << fmt(r.mean_recall) << ","
           << fmt(r.nms_time_saved_ms) << "," << fmt(r.recall_cost) << "\n";
    return os.str();
}

} // namespace phantom::bench
