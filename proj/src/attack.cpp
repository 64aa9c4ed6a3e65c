#include "phantom/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "phantom/tensor_io.hpp"

namespace phantom::atk {

Tensor loss_single_conf(Tape& tape, const Tensor& obj, const Tensor& cls, real threshold) {
    Tensor deficit = tape.sub(Tensor::scalar(threshold), tape.mul(obj, cls));
    return tape.clamp_min(deficit, 0);
}

Tensor loss_max_objects(Tape& tape, const det::Candidates& c, real threshold,
                        bool over_total, bool* empty_set) {
    Tensor conf = tape.mul(c.obj, tape.max_over_axis(c.cls, 1)); // [N]
    std::vector<int64_t> idx;
    for (std::size_t i = 0; i < conf.numel(); ++i)
        if (conf.at(i) <= threshold) idx.push_back(int64_t(i));
    if (empty_set) *empty_set = idx.empty();
    if (idx.empty()) return Tensor::scalar(0);
    const int k = int(idx.size());
    const int n = int(conf.numel());
    Tensor sel = tape.take(conf, std::move(idx), {k});
    Tensor hinge = tape.clamp_min(tape.sub(Tensor::scalar(threshold), sel), 0);
    if (!over_total) return tape.mean(hinge);
    return tape.mul(tape.sum(hinge), Tensor::scalar(real(1) / real(n)));
}

Tensor loss_max_iou(Tape& tape, const det::Candidates& pert,
                    const std::vector<nms::Box>& clean_final,
                    const std::vector<int>& pert_final) {
    if (clean_final.empty()) return Tensor::scalar(0);
    if (pert_final.empty()) return Tensor::scalar(1);
    const int k = int(clean_final.size());
    const int m = int(pert_final.size());

    std::vector<int64_t> idx(pert_final.begin(), pert_final.end());
    Tensor px1 = tape.reshape(tape.take(pert.x1, idx, {m}), {1, m});
    Tensor py1 = tape.reshape(tape.take(pert.y1, idx, {m}), {1, m});
    Tensor px2 = tape.reshape(tape.take(pert.x2, idx, {m}), {1, m});
    Tensor py2 = tape.reshape(tape.take(pert.y2, idx, {m}), {1, m});

    Tensor cx1 = Tensor::zeros({k, 1}), cy1 = Tensor::zeros({k, 1});
    Tensor cx2 = Tensor::zeros({k, 1}), cy2 = Tensor::zeros({k, 1});
    for (int i = 0; i < k; ++i) {
        cx1.data()[i] = clean_final[std::size_t(i)].x1;
        cy1.data()[i] = clean_final[std::size_t(i)].y1;
        cx2.data()[i] = clean_final[std::size_t(i)].x2;
        cy2.data()[i] = clean_final[std::size_t(i)].y2;
    }

    // pairwise IoU [k, m] via broadcasting
    Tensor iw = tape.clamp_min(
        tape.sub(tape.minimum(cx2, px2), tape.maximum(cx1, px1)), 0);
    Tensor ih = tape.clamp_min(
        tape.sub(tape.minimum(cy2, py2), tape.maximum(cy1, py1)), 0);
    Tensor inter = tape.mul(iw, ih);
    Tensor area_p = tape.mul(tape.sub(px2, px1), tape.sub(py2, py1));
    Tensor area_c = Tensor::zeros({k, 1});
    for (int i = 0; i < k; ++i) {
        const auto& b = clean_final[std::size_t(i)];
        area_c.data()[i] = (b.x2 - b.x1) * (b.y2 - b.y1);
    }
    Tensor uni = tape.sub(tape.add(area_c, area_p), inter);
    Tensor iou = tape.div(inter, uni);
    Tensor best = tape.max_over_axis(iou, 1); // [k]
    return tape.sub(Tensor::scalar(1), tape.mean(best));
}

Tensor loss_total(Tape& tape, const det::Candidates& pert,
                  const std::vector<nms::Box>& clean_final,
                  const std::vector<int>& pert_final, const AttackParams& p,
                  bool* empty_set) {
    if (p.alpha >= 1)
        return loss_max_objects(tape, pert, p.conf_threshold, p.overflow_over_total,
                                empty_set);
    Tensor iou_term = loss_max_iou(tape, pert, clean_final, pert_final);
    if (p.alpha <= 0) {
        if (empty_set) *empty_set = false;
        return iou_term;
    }
    Tensor mo = loss_max_objects(tape, pert, p.conf_threshold, p.overflow_over_total,
                                 empty_set);
    return tape.add(tape.mul(mo, Tensor::scalar(p.alpha)),
                    tape.mul(iou_term, Tensor::scalar(1 - p.alpha)));
}

bool project(Tensor& delta, const AttackParams& p) {
    if (p.epsilon < 0) throw ValueError("project: negative epsilon");
    bool clipped = false;
    real* d = delta.data();
    if (p.norm == Norm::Linf) {
        const real bound = p.epsilon / 255;
        for (std::size_t i = 0; i < delta.numel(); ++i) {
            const real v = std::clamp(d[i], -bound, bound);
            if (v != d[i]) {
                d[i] = v;
                clipped = true;
            }
        }
        return clipped;
    }
    double sq = 0;
    for (std::size_t i = 0; i < delta.numel(); ++i) sq += double(d[i]) * d[i];
    const double norm = std::sqrt(sq) * 255;
    if (norm > double(p.epsilon) * (1 + 1e-6)) {
        const real scale = real(double(p.epsilon) / norm);
        for (std::size_t i = 0; i < delta.numel(); ++i) d[i] *= scale;
        clipped = true;
    }
    return clipped;
}

Tensor apply(const Tensor& image, const Tensor& delta) {
    if (image.shape() != delta.shape())
        throw ShapeError("apply: image " + shape_str(image.shape()) +
                         " vs delta " + shape_str(delta.shape()));
    Tensor out = image.clone();
    real* o = out.data();
    const real* d = delta.data();
    for (std::size_t i = 0; i < out.numel(); ++i)
        o[i] = std::clamp(o[i] + d[i], real(0), real(1));
    return out;
}

namespace {

// flat candidate indices of the entries NMS kept
std::vector<int> final_indices(const det::Candidates& c, real conf_threshold,
                               real iou_threshold) {
    std::vector<int> kept_idx;
    auto entries = det::filter_candidates(c, conf_threshold, &kept_idx);
    nms::Params np;
    np.iou_threshold = iou_threshold;
    auto res = nms::suppress(entries, np);
    std::vector<int> out;
    out.reserve(res.kept.size());
    for (const auto& e : res.kept) out.push_back(kept_idx[std::size_t(e.index)]);
    return out;
}

} // namespace

CraftResult craft_uap(const std::vector<const det::ToyDetector*>& dets,
                      const std::vector<scene::Scene>& train, const AttackParams& p) {
    if (dets.empty()) throw ValueError("craft_uap: no detectors");
    if (train.empty()) throw ValueError("craft_uap: no training images");
    if (p.epochs < 1) throw ValueError("craft_uap: epochs must be >= 1");
    const Shape img_shape = train[0].image.shape();
    for (const auto* d : dets)
        if (d->config().image_size != img_shape[1])
            throw ValueError("craft_uap: detector/image size mismatch");

    const bool need_iou = p.alpha < 1;
    // clean final detections per (detector, image), fixed for the whole run
    std::vector<std::vector<std::vector<nms::Box>>> clean_final(dets.size());
    if (need_iou)
        for (std::size_t d = 0; d < dets.size(); ++d) {
            clean_final[d].resize(train.size());
            for (std::size_t i = 0; i < train.size(); ++i) {
                Tape tape;
                det::Candidates c = dets[d]->forward(tape, train[i].image);
                for (int fi : final_indices(c, p.conf_threshold, p.iou_threshold)) {
                    clean_final[d][i].push_back(
                        {c.x1.at(std::size_t(fi)), c.y1.at(std::size_t(fi)),
                         c.x2.at(std::size_t(fi)), c.y2.at(std::size_t(fi))});
                }
            }
        }

    CraftResult out;
    out.delta = Tensor::zeros(img_shape);
    out.delta.set_requires_grad(true);
    Tensor last_valid = out.delta.clone();
    const real l2_step = p.epsilon / (10 * real(p.epochs)) / 255;

    for (int epoch = 0; epoch < p.epochs; ++epoch) {
        real epoch_loss = 0;
        bool bad = false;
        for (std::size_t i = 0; i < train.size() && !bad; ++i) {
            out.delta.zero_grad();
            real step_loss = 0;
            for (std::size_t d = 0; d < dets.size(); ++d) {
                Tape tape;
                Tensor perturbed =
                    tape.clamp(tape.add(train[i].image, out.delta), 0, 1);
                det::Candidates c = dets[d]->forward(tape, perturbed);
                std::vector<int> pert_final;
                if (need_iou)
                    pert_final = final_indices(c, p.conf_threshold, p.iou_threshold);
                bool empty = false;
                Tensor loss = loss_total(tape, c, need_iou ? clean_final[d][i]
                                                           : std::vector<nms::Box>{},
                                         pert_final, p, &empty);
                if (empty) out.stats.empty_overflow_sets += 1;
                const real lv = loss.item();
                if (!std::isfinite(lv)) {
                    bad = true;
                    break;
                }
                step_loss += lv;
                if (tape.size() > 0) tape.backward(loss);
            }
            if (bad) break;
            epoch_loss += step_loss / real(dets.size());

            real* dv = out.delta.data();
            const real* g = out.delta.grad();
            const real inv_d = real(1) / real(dets.size());
            if (p.norm == Norm::Linf) {
                for (std::size_t j = 0; j < out.delta.numel(); ++j) {
                    const real gj = g[j] * inv_d;
                    if (gj > 0) dv[j] -= p.step;
                    else if (gj < 0) dv[j] += p.step;
                }
            } else {
                double sq = 0;
                for (std::size_t j = 0; j < out.delta.numel(); ++j)
                    sq += double(g[j]) * g[j];
                const real gn = real(std::sqrt(sq)) * inv_d;
                if (gn > 0) {
                    const real scale = l2_step / gn * inv_d;
                    for (std::size_t j = 0; j < out.delta.numel(); ++j)
                        dv[j] -= scale * g[j];
                }
            }
            if (project(out.delta, p)) out.stats.clip_events += 1;
            // post-step invariant: the projected delta is inside the ball
            if (p.norm == Norm::Linf) {
                const real bound = p.epsilon / 255;
                for (std::size_t j = 0; j < out.delta.numel(); ++j)
                    if (std::abs(dv[j]) > bound) {
                        out.stats.projection_violations += 1;
                        break;
                    }
            } else {
                double sq = 0;
                for (std::size_t j = 0; j < out.delta.numel(); ++j)
                    sq += double(dv[j]) * dv[j];
                if (std::sqrt(sq) * 255 > double(p.epsilon) * (1 + 2e-6))
                    out.stats.projection_violations += 1;
            }
        }
        if (bad) {
            out.stats.aborted = true;
            std::copy(last_valid.data(), last_valid.data() + last_valid.numel(),
                      out.delta.data());
            break;
        }
        last_valid = out.delta.clone();
        epoch_loss /= real(train.size());
        out.stats.epoch_loss.push_back(epoch_loss);
        if (p.verbose)
            std::fprintf(stderr, "craft epoch %3d  loss %.6f\n", epoch,
                         double(epoch_loss));
    }
    out.delta.set_requires_grad(false);
    return out;
}

void save_perturbation(const std::filesystem::path& path, const Tensor& delta,
                       const AttackParams& p) {
    save_tnsr1(path, delta);
    std::ostringstream os;
    os << "epsilon=" << p.epsilon << "\n"
       << "alpha=" << p.alpha << "\n"
       << "norm=" << (p.norm == Norm::Linf ? "linf" : "l2") << "\n"
       << "conf_threshold=" << p.conf_threshold << "\n"
       << "epochs=" << p.epochs << "\n"
       << "step=" << p.step << "\n"
       << "seed=" << p.seed << "\n";
    std::filesystem::path meta = path;
    meta += ".meta";
    write_file_atomic(meta, os.str());
}

Tensor load_perturbation(const std::filesystem::path& path, AttackParams* params_out) {
    Tensor delta = load_tnsr1(path);
    if (params_out) {
        std::filesystem::path meta = path;
        meta += ".meta";
        std::ifstream is(meta);
        if (!is) throw ValueError("cannot open " + meta.string());
        std::string line;
        while (std::getline(is, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
            if (key == "epsilon") params_out->epsilon = real(std::stod(val));
            else if (key == "alpha") params_out->alpha = real(std::stod(val));
            else if (key == "norm")
                params_out->norm = (val == "l2") ? Norm::L2 : Norm::Linf;
            else if (key == "conf_threshold")
                params_out->conf_threshold = real(std::stod(val));
            else if (key == "epochs") params_out->epochs = std::stoi(val);
            else if (key == "step") params_out->step = real(std::stod(val));
            else if (key == "seed") params_out->seed = std::stoull(val);
        }
    }
    return delta;
}

Tensor visualize_delta(const Tensor& delta, real epsilon) {
    Tensor out = delta.clone();
    const real bound = std::max(epsilon / 255, real(1e-9));
    for (auto& v : out.vec())
        v = std::clamp(real(0.5) + v / (2 * bound), real(0), real(1));
    return out;
}

} // namespace phantom::atk
