// phantomlab: generate synthetic scenes, train the toy detector, craft
// universal perturbations that flood NMS, and benchmark the damage.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <CLI11.hpp>

#include "phantom/attack.hpp"
#include "phantom/bench.hpp"
#include "phantom/detector.hpp"
#include "phantom/kernels.hpp"
#include "phantom/scenegen.hpp"
#include "phantom/tensor_io.hpp"

using namespace phantom;
namespace fs = std::filesystem;

namespace {

// output directory override used by every artifact-writing subcommand
fs::path resolve_out(const std::string& path) {
    const char* dir = std::getenv("PHANTOMLAB_OUT_DIR");
    fs::path p(path);
    if (dir && *dir && p.is_relative()) return fs::path(dir) / p;
    return p;
}

det::DetectorConfig config_for_size(int image_size) {
    det::DetectorConfig cfg;
    const real scale = real(image_size) / real(cfg.image_size);
    cfg.image_size = image_size;
    for (auto& per_scale : cfg.anchors)
        for (auto& a : per_scale) a *= scale;
    return cfg;
}

std::vector<scene::Scene> load_scenes(const std::string& dir, int limit) {
    auto scenes = scene::load_dataset(dir);
    if (scenes.empty()) throw ValueError("dataset " + dir + " is empty");
    if (limit > 0 && int(scenes.size()) > limit) scenes.resize(std::size_t(limit));
    return scenes;
}

int run(int argc, char** argv) {
    CLI::App app{"desk-scale NMS availability-attack lab"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "phantomlab 1.0");
    app.footer("kernel backend: set PHANTOM_KERNELS=scalar|avx2 to override "
               "auto-detection; PHANTOMLAB_OUT_DIR prefixes relative output paths");

    // ---- gen-data ----------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic scene dataset");
    std::string gen_out = "data";
    std::uint64_t gen_seed = 1;
    int gen_count = 100;
    scene::GenParams gp;
    gen->add_option("--out", gen_out, "output directory")->capture_default_str();
    gen->add_option("--seed", gen_seed, "PRNG seed")->capture_default_str();
    gen->add_option("--count", gen_count, "number of images")->capture_default_str();
    gen->add_option("--image-size", gp.image_size, "square image side")
        ->capture_default_str();
    gen->add_option("--min-objects", gp.min_objects)->capture_default_str();
    gen->add_option("--max-objects", gp.max_objects)->capture_default_str();
    gen->add_option("--classes", gp.num_classes)->capture_default_str();
    gen->add_option("--noise", gp.noise_level, "background noise amplitude")
        ->capture_default_str();

    // ---- train -------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train a detector on a dataset");
    std::string tr_data, tr_out = "detector.bin";
    det::TrainParams tp;
    int tr_limit = 0;
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--out", tr_out, "detector output file")->capture_default_str();
    tr->add_option("--epochs", tp.epochs)->capture_default_str();
    tr->add_option("--lr", tp.lr, "learning rate")->capture_default_str();
    tr->add_option("--box-weight", tp.box_weight)->capture_default_str();
    tr->add_option("--seed", tp.seed)->capture_default_str();
    tr->add_option("--limit", tr_limit, "use only the first N images");
    tr->add_flag("--verbose", tp.verbose, "print per-epoch loss");

    // ---- craft-uap ---------------------------------------------------------
    auto* cr = app.add_subcommand("craft-uap",
                                  "craft a universal perturbation with PGD");
    std::vector<std::string> cr_dets;
    std::string cr_data, cr_out = "uap.tnsr";
    std::string cr_norm = "linf";
    atk::AttackParams ap;
    int cr_limit = 0;
    bool cr_ppm = false;
    cr->add_option("--detector", cr_dets, "detector file (repeat for an ensemble)")
        ->required();
    cr->add_option("--data", cr_data, "dataset directory")->required();
    cr->add_option("--out", cr_out, "perturbation output file")->capture_default_str();
    cr->add_option("--epsilon", ap.epsilon, "budget in 0..255 pixel units")
        ->capture_default_str();
    cr->add_option("--alpha", ap.alpha, "overflow/preservation loss mix")
        ->capture_default_str();
    cr->add_option("--norm", cr_norm, "linf or l2")->capture_default_str();
    cr->add_option("--epochs", ap.epochs)->capture_default_str();
    cr->add_option("--step", ap.step, "per-step amplitude (Linf)")
        ->capture_default_str();
    cr->add_option("--conf-threshold", ap.conf_threshold)->capture_default_str();
    cr->add_option("--seed", ap.seed)->capture_default_str();
    cr->add_option("--limit", cr_limit, "use only the first N images");
    cr->add_flag("--overflow-over-total", ap.overflow_over_total,
                 "normalize the overflow term by the full candidate count");
    cr->add_flag("--ppm", cr_ppm, "also export the perturbation as a PPM");
    cr->add_flag("--verbose", ap.verbose, "print per-epoch loss");

    // ---- evaluate ----------------------------------------------------------
    auto* ev = app.add_subcommand("evaluate", "benchmark clean vs perturbed latency");
    std::string ev_det, ev_data, ev_uap, ev_csv = "eval.csv", ev_json = "eval.json";
    int ev_iters = 40, ev_limit = 0;
    real ev_conf = real(0.25), ev_iou = real(0.45);
    ev->add_option("--detector", ev_det)->required();
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--uap", ev_uap, "perturbation file (omit for clean-only)");
    ev->add_option("--out-csv", ev_csv)->capture_default_str();
    ev->add_option("--out-json", ev_json)->capture_default_str();
    ev->add_option("--iterations", ev_iters, "timed NMS runs per image")
        ->capture_default_str();
    ev->add_option("--conf-threshold", ev_conf)->capture_default_str();
    ev->add_option("--iou-threshold", ev_iou)->capture_default_str();
    ev->add_option("--limit", ev_limit, "use only the first N images");

    // ---- sweep -------------------------------------------------------------
    auto* sw = app.add_subcommand(
        "sweep", "craft and evaluate across epsilon and alpha grids");
    std::string sw_det, sw_data, sw_prefix = "sweep";
    std::vector<real> sw_eps{5, 25, 30, 50, 70};
    std::vector<real> sw_alpha{1};
    int sw_epochs = 30, sw_iters = 40, sw_craft_limit = 0, sw_eval_limit = 0;
    real sw_conf = real(0.25);
    sw->add_option("--detector", sw_det)->required();
    sw->add_option("--data", sw_data, "dataset directory (crafting and evaluation)")
        ->required();
    sw->add_option("--epsilons", sw_eps, "epsilon grid")->capture_default_str();
    sw->add_option("--alphas", sw_alpha, "alpha grid")->capture_default_str();
    sw->add_option("--epochs", sw_epochs, "craft epochs per point")
        ->capture_default_str();
    sw->add_option("--iterations", sw_iters)->capture_default_str();
    sw->add_option("--conf-threshold", sw_conf)->capture_default_str();
    sw->add_option("--craft-limit", sw_craft_limit, "craft on first N images");
    sw->add_option("--eval-limit", sw_eval_limit, "evaluate on first N images");
    sw->add_option("--out-prefix", sw_prefix, "writes PREFIX.csv and PREFIX.dat")
        ->capture_default_str();

    // ---- mitigate ----------------------------------------------------------
    auto* mi = app.add_subcommand("mitigate", "evaluate defenses on an attacked run");
    std::string mi_det, mi_data, mi_uap, mi_out = "mitigations.csv";
    std::vector<std::size_t> mi_caps;
    std::vector<double> mi_budgets;
    std::vector<real> mi_thresholds;
    int mi_iters = 40, mi_limit = 0;
    real mi_conf = real(0.25);
    mi->add_option("--detector", mi_det)->required();
    mi->add_option("--data", mi_data)->required();
    mi->add_option("--uap", mi_uap)->required();
    mi->add_option("--cap", mi_caps, "candidate cap policies");
    mi->add_option("--time-budget", mi_budgets, "NMS time budgets (ms)");
    mi->add_option("--raise-threshold", mi_thresholds, "stricter confidence filters");
    mi->add_option("--iterations", mi_iters)->capture_default_str();
    mi->add_option("--conf-threshold", mi_conf)->capture_default_str();
    mi->add_option("--limit", mi_limit, "use only the first N images");
    mi->add_option("--out", mi_out)->capture_default_str();

    // ---- report ------------------------------------------------------------
    auto* rp = app.add_subcommand("report", "summarize an evaluation JSON as text");
    std::string rp_json, rp_out = "report.txt";
    rp->add_option("--json", rp_json, "evaluate --out-json artifact")->required();
    rp->add_option("--out", rp_out)->capture_default_str();

    // exit codes: 0 success, 1 usage error, 2 runtime failure
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    if (gen->parsed()) {
        auto scenes = scene::generate(gen_seed, gen_count, gp);
        scene::save_dataset(resolve_out(gen_out), scenes, gp, gen_seed);
        std::printf("wrote %d scenes to %s (seed %llu)\n", gen_count,
                    resolve_out(gen_out).c_str(),
                    static_cast<unsigned long long>(gen_seed));
        return 0;
    }

    if (tr->parsed()) {
        auto scenes = load_scenes(tr_data, tr_limit);
        det::ToyDetector detector(config_for_size(scenes[0].image.shape()[1]));
        detector.init_weights(tp.seed);
        auto stats = det::train(detector, scenes, tp);
        detector.save(resolve_out(tr_out));
        std::printf("trained %d epochs on %zu images, loss %.4f -> %.4f, saved %s\n",
                    tp.epochs, scenes.size(), double(stats.epoch_loss.front()),
                    double(stats.epoch_loss.back()), resolve_out(tr_out).c_str());
        return 0;
    }

    if (cr->parsed()) {
        ap.norm = (cr_norm == "l2") ? atk::Norm::L2 : atk::Norm::Linf;
        if (cr_norm != "l2" && cr_norm != "linf")
            throw CLI::ValidationError("--norm", "must be linf or l2");
        std::vector<det::ToyDetector> dets;
        dets.reserve(cr_dets.size());
        for (const auto& p : cr_dets) dets.push_back(det::ToyDetector::load(p));
        std::vector<const det::ToyDetector*> det_ptrs;
        for (const auto& d : dets) det_ptrs.push_back(&d);
        auto scenes = load_scenes(cr_data, cr_limit);
        auto result = atk::craft_uap(det_ptrs, scenes, ap);
        const fs::path out = resolve_out(cr_out);
        atk::save_perturbation(out, result.delta, ap);
        if (cr_ppm) {
            fs::path ppm = out;
            ppm += ".ppm";
            write_file_atomic(ppm, scene::encode_ppm(
                                       atk::visualize_delta(result.delta, ap.epsilon)));
        }
        std::printf("crafted over %zu images x %d epochs (loss %.5f -> %.5f%s), "
                    "saved %s\n",
                    scenes.size(), ap.epochs, double(result.stats.epoch_loss.front()),
                    double(result.stats.epoch_loss.back()),
                    result.stats.aborted ? ", aborted on non-finite loss" : "",
                    out.c_str());
        return 0;
    }

    if (ev->parsed()) {
        det::ToyDetector detector = det::ToyDetector::load(ev_det);
        auto scenes = load_scenes(ev_data, ev_limit);
        nms::Params np;
        np.iou_threshold = ev_iou;
        atk::AttackParams meta;
        meta.conf_threshold = ev_conf;
        Tensor delta;
        if (!ev_uap.empty()) delta = atk::load_perturbation(ev_uap, &meta);
        meta.conf_threshold = ev_conf;
        auto report = bench::evaluate(detector, scenes, ev_uap.empty() ? nullptr : &delta,
                                      meta, np, ev_iters);
        write_file_atomic(resolve_out(ev_csv), bench::to_csv(report));
        write_file_atomic(resolve_out(ev_json), bench::to_json(report));
        std::printf("clean:     %7.1f candidates  %8.3f ms NMS  recall %.3f\n",
                    report.clean.mean_candidates, report.clean.mean_nms_ms,
                    report.clean.mean_recall);
        if (!ev_uap.empty())
            std::printf("perturbed: %7.1f candidates  %8.3f ms NMS  recall %.3f\n",
                        report.perturbed.mean_candidates, report.perturbed.mean_nms_ms,
                        report.perturbed.mean_recall);
        return 0;
    }

    if (sw->parsed()) {
        det::ToyDetector detector = det::ToyDetector::load(sw_det);
        auto craft_scenes = load_scenes(sw_data, sw_craft_limit);
        auto eval_scenes = load_scenes(sw_data, sw_eval_limit);
        std::vector<bench::SweepPoint> points;
        for (real a : sw_alpha)
            for (real e : sw_eps) {
                atk::AttackParams p;
                p.conf_threshold = sw_conf;
                p.alpha = a;
                p.epsilon = e;
                p.epochs = sw_epochs;
                auto crafted = atk::craft_uap({&detector}, craft_scenes, p);
                bench::SweepPoint pt;
                pt.epsilon = e;
                pt.alpha = a;
                pt.delta = crafted.delta;
                points.push_back(pt);
                std::printf("crafted eps=%g alpha=%g\n", double(e), double(a));
            }
        nms::Params np;
        auto rows = bench::sweep(detector, eval_scenes, points, np, sw_conf, sw_iters);
        write_file_atomic(resolve_out(sw_prefix + ".csv"), bench::sweep_csv(rows));
        write_file_atomic(resolve_out(sw_prefix + ".dat"),
                          bench::sweep_dat(rows, detector.config().candidate_count()));
        std::printf("wrote %s.csv and %s.dat (%zu points)\n", sw_prefix.c_str(),
                    sw_prefix.c_str(), rows.size());
        return 0;
    }

    if (mi->parsed()) {
        det::ToyDetector detector = det::ToyDetector::load(mi_det);
        auto scenes = load_scenes(mi_data, mi_limit);
        Tensor delta = atk::load_perturbation(mi_uap);
        std::vector<bench::Mitigation> policies;
        for (std::size_t c : mi_caps)
            policies.push_back({"cap" + std::to_string(c), c, std::nullopt, std::nullopt});
        for (double b : mi_budgets)
            policies.push_back({"budget" + std::to_string(b) + "ms", std::nullopt, b,
                                std::nullopt});
        for (real t : mi_thresholds)
            policies.push_back({"conf" + std::to_string(double(t)), std::nullopt,
                                std::nullopt, t});
        auto rows = bench::evaluate_mitigations(detector, scenes, delta, policies,
                                                nms::Params{}, mi_conf, mi_iters);
        write_file_atomic(resolve_out(mi_out), bench::mitigation_csv(rows));
        for (const auto& r : rows)
            std::printf("%-16s %8.1f candidates  %8.3f ms NMS  recall %.3f\n",
                        r.name.c_str(), r.mean_candidates, r.mean_nms_ms,
                        r.mean_recall);
        return 0;
    }

    if (rp->parsed()) {
        std::ifstream is(rp_json);
        if (!is) throw ValueError("cannot open " + rp_json);
        std::stringstream buf;
        buf << is.rdbuf();
        nlohmann::json j = nlohmann::json::parse(buf.str());
        std::ostringstream os;
        os << "evaluation summary\n==================\n";
        for (const char* variant : {"clean", "perturbed"}) {
            const auto& a = j.at(variant);
            if (a.at("images").get<int>() == 0) continue;
            os << variant << ": images=" << a.at("images").get<int>()
               << " mean_candidates=" << a.at("mean_candidates").get<double>()
               << " mean_nms_ms=" << a.at("mean_nms_ms").get<double>()
               << " mean_total_ms=" << a.at("mean_total_ms").get<double>()
               << " mean_recall=" << a.at("mean_recall").get<double>() << "\n";
        }
        const auto& hist = j.at("phantom_class_histogram");
        os << "phantom candidates per class:";
        for (const auto& h : hist) os << " " << h.get<std::size_t>();
        os << "\n";
        const auto cj = j.at("clean");
        const auto pj = j.at("perturbed");
        if (pj.at("images").get<int>() > 0) {
            const double slow = pj.at("mean_nms_ms").get<double>() /
                                std::max(1e-9, cj.at("mean_nms_ms").get<double>());
            os << "NMS slowdown: " << slow << "x\n";
        }
        write_file_atomic(resolve_out(rp_out), os.str());
        std::fputs(os.str().c_str(), stdout);
        return 0;
    }

    return 1; // unreachable: require_subcommand
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const CLI::Error&) {
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "phantomlab: %s\n", e.what());
        return 2;
    }
}
