#include "phantom/detector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "phantom/tensor_io.hpp"

namespace phantom::det {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

} // namespace

int DetectorConfig::candidate_count() const {
    int n = 0;
    for (int s : strides) {
        const int g = image_size / s;
        n += anchors_per_scale * g * g;
    }
    return n;
}

void DetectorConfig::validate() const {
    if (strides.empty()) throw ValueError("detector: no scales");
    if (anchors.size() != strides.size())
        throw ValueError("detector: anchors/strides length mismatch");
    if (widths.size() != strides.size() + 2)
        throw ValueError("detector: widths must cover all downsampling convs");
    for (std::size_t i = 0; i < strides.size(); ++i) {
        if (image_size % strides[i] != 0)
            throw ValueError("detector: image_size not divisible by stride " +
                             std::to_string(strides[i]));
        if (int(anchors[i].size()) != anchors_per_scale)
            throw ValueError("detector: wrong anchor count for scale " + std::to_string(i));
    }
    if (num_classes < 1) throw ValueError("detector: num_classes must be >= 1");
}

ToyDetector::ToyDetector(DetectorConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int per_anchor = 5 + cfg_.num_classes;
    int in_ch = 3;
    for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
        const int out_ch = cfg_.widths[i];
        const std::string id = "c" + std::to_string(i);
        weights_[id + ".w"] = Tensor::zeros({out_ch, in_ch, 3, 3});
        weights_[id + ".b"] = Tensor::zeros({out_ch, 1, 1});
        in_ch = out_ch;
    }
    // heads read the last three backbone stages (stride 8/16/32)
    for (std::size_t s = 0; s < cfg_.strides.size(); ++s) {
        const int feat_ch = cfg_.widths[cfg_.widths.size() - cfg_.strides.size() + s];
        const std::string id = "h" + std::to_string(s);
        weights_[id + ".w"] =
            Tensor::zeros({cfg_.anchors_per_scale * per_anchor, feat_ch, 3, 3});
        weights_[id + ".b"] = Tensor::zeros({cfg_.anchors_per_scale * per_anchor, 1, 1});
    }
    for (auto& [name, w] : weights_) w.set_requires_grad(true);
}

void ToyDetector::init_weights(std::uint64_t seed) {
    scene::Xoshiro256ss rng(seed);
    const int per_anchor = 5 + cfg_.num_classes;
    for (auto& [name, w] : weights_) {
        if (name.back() == 'b') {
            std::fill(w.vec().begin(), w.vec().end(), real(0));
            continue;
        }
        const Shape& s = w.shape();
        const double fan_in = double(s[1]) * s[2] * s[3];
        const double bound = std::sqrt(6.0 / fan_in);
        for (auto& v : w.vec()) v = real(rng.uniform(-bound, bound));
    }
    // start objectness near zero probability so early training is not
    // swamped by false positives
    for (std::size_t s = 0; s < cfg_.strides.size(); ++s) {
        Tensor& b = weights_["h" + std::to_string(s) + ".b"];
        for (int a = 0; a < cfg_.anchors_per_scale; ++a)
            b.data()[a * per_anchor + 4] = real(-2);
    }
}

Candidates ToyDetector::forward(Tape& tape, const Tensor& image) const {
    const int s_img = cfg_.image_size;
    if (image.rank() != 3 || image.shape() != Shape{3, s_img, s_img})
        throw ShapeError("detector expects a [3," + std::to_string(s_img) + "," +
                         std::to_string(s_img) + "] image, got " + shape_str(image.shape()));
    const int per_anchor = 5 + cfg_.num_classes;
    const int n_scales = int(cfg_.strides.size());
    const int a_per = cfg_.anchors_per_scale;
    const int nc = cfg_.num_classes;

    Tensor x = tape.reshape(image, {1, 3, s_img, s_img});
    std::vector<Tensor> feats; // last n_scales backbone stages
    for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
        const std::string id = "c" + std::to_string(i);
        x = tape.conv2d(x, weights_.at(id + ".w"), 2, 1);
        x = tape.add(x, weights_.at(id + ".b"));
        x = tape.leaky_relu(x, real(0.1));
        if (i + n_scales >= cfg_.widths.size()) feats.push_back(x);
    }

    Candidates out;
    std::vector<Tensor> objs, clss, objls, clsls, x1s, y1s, x2s, y2s;
    for (int s = 0; s < n_scales; ++s) {
        const std::string id = "h" + std::to_string(s);
        Tensor h = tape.conv2d(feats[std::size_t(s)], weights_.at(id + ".w"), 1, 1);
        h = tape.add(h, weights_.at(id + ".b"));

        const int stride = cfg_.strides[std::size_t(s)];
        const int g = s_img / stride;
        const int n_s = a_per * g * g;
        auto comp_idx = [&](int k) {
            std::vector<int64_t> idx(static_cast<std::size_t>(n_s), 0);
            std::size_t p = 0;
            for (int a = 0; a < a_per; ++a)
                for (int y = 0; y < g; ++y)
                    for (int xx = 0; xx < g; ++xx)
                        idx[p++] = (int64_t(a * per_anchor + k) * g + y) * g + xx;
            return idx;
        };
        Tensor tx = tape.take(h, comp_idx(0), {n_s});
        Tensor ty = tape.take(h, comp_idx(1), {n_s});
        Tensor tw = tape.take(h, comp_idx(2), {n_s});
        Tensor th = tape.take(h, comp_idx(3), {n_s});
        Tensor obj_l = tape.take(h, comp_idx(4), {n_s});
        std::vector<int64_t> cidx(std::size_t(n_s) * nc);
        {
            std::size_t p = 0;
            for (int a = 0; a < a_per; ++a)
                for (int y = 0; y < g; ++y)
                    for (int xx = 0; xx < g; ++xx)
                        for (int c = 0; c < nc; ++c)
                            cidx[p++] = (int64_t(a * per_anchor + 5 + c) * g + y) * g + xx;
        }
        Tensor cls_l = tape.take(h, std::move(cidx), {n_s, nc});

        Tensor cols = Tensor::zeros({n_s});
        Tensor rows = Tensor::zeros({n_s});
        Tensor aw4 = Tensor::zeros({n_s}); // 4 * anchor side
        {
            std::size_t p = 0;
            for (int a = 0; a < a_per; ++a)
                for (int y = 0; y < g; ++y)
                    for (int xx = 0; xx < g; ++xx, ++p) {
                        cols.data()[p] = real(xx);
                        rows.data()[p] = real(y);
                        aw4.data()[p] = 4 * cfg_.anchors[std::size_t(s)][std::size_t(a)];
                        out.scale.push_back(s);
                        out.anchor.push_back(a);
                        out.row.push_back(y);
                        out.col.push_back(xx);
                    }
        }
        const Tensor two = Tensor::scalar(2), neg_half = Tensor::scalar(real(-0.5));
        const Tensor half = Tensor::scalar(real(0.5));
        const Tensor stride_t = Tensor::scalar(real(stride));

        Tensor sx = tape.sigmoid(tx), sy = tape.sigmoid(ty);
        Tensor sw = tape.sigmoid(tw), sh = tape.sigmoid(th);
        Tensor cx = tape.mul(tape.add(tape.add(tape.mul(sx, two), neg_half), cols), stride_t);
        Tensor cy = tape.mul(tape.add(tape.add(tape.mul(sy, two), neg_half), rows), stride_t);
        Tensor w = tape.mul(tape.mul(sw, sw), aw4);
        Tensor hgt = tape.mul(tape.mul(sh, sh), aw4);

        x1s.push_back(tape.sub(cx, tape.mul(w, half)));
        x2s.push_back(tape.add(cx, tape.mul(w, half)));
        y1s.push_back(tape.sub(cy, tape.mul(hgt, half)));
        y2s.push_back(tape.add(cy, tape.mul(hgt, half)));
        objls.push_back(obj_l);
        clsls.push_back(cls_l);
        objs.push_back(tape.sigmoid(obj_l));
        clss.push_back(tape.sigmoid(cls_l));
    }

    out.obj = tape.concat0(objs);
    out.cls = tape.concat0(clss);
    out.obj_logits = tape.concat0(objls);
    out.cls_logits = tape.concat0(clsls);
    out.x1 = tape.concat0(x1s);
    out.y1 = tape.concat0(y1s);
    out.x2 = tape.concat0(x2s);
    out.y2 = tape.concat0(y2s);
    return out;
}

void ToyDetector::zero_grads() {
    for (auto& [name, w] : weights_) w.zero_grad();
}

void ToyDetector::sgd_step(real lr) {
    for (auto& [name, w] : weights_) {
        real* v = w.data();
        const real* g = w.grad();
        for (std::size_t i = 0; i < w.numel(); ++i) v[i] -= lr * g[i];
    }
}

std::vector<nms::Entry> filter_candidates(const Candidates& c, real conf_threshold,
                                          std::vector<int>* kept_idx) {
    const int n = c.count();
    const int nc = c.cls.shape()[1];
    std::vector<nms::Entry> entries;
    if (kept_idx) kept_idx->clear();
    for (int i = 0; i < n; ++i) {
        const real obj = c.obj.at(std::size_t(i));
        if (!(obj > conf_threshold)) continue;
        int best_c = 0;
        real best = c.cls.at(std::size_t(i) * nc);
        for (int k = 1; k < nc; ++k)
            if (c.cls.at(std::size_t(i) * nc + k) > best) {
                best = c.cls.at(std::size_t(i) * nc + k);
                best_c = k;
            }
        const real conf = obj * best;
        if (!(conf > conf_threshold)) continue;
        nms::Entry e;
        e.box = {c.x1.at(std::size_t(i)), c.y1.at(std::size_t(i)),
                 c.x2.at(std::size_t(i)), c.y2.at(std::size_t(i))};
        e.class_id = best_c;
        e.confidence = conf;
        e.index = int(entries.size());
        entries.push_back(e);
        if (kept_idx) kept_idx->push_back(i);
    }
    return entries;
}

namespace {

struct Positive {
    int flat; // candidate index
    int class_id;
    nms::Box box;
};

// anchor match score: IoU of the object's w/h against a co-centered square
// anchor of the given side
double wh_iou(double w, double h, double side) {
    const double inter = std::min(w, side) * std::min(h, side);
    return inter / (w * h + side * side - inter);
}

std::vector<Positive> assign_targets(const DetectorConfig& cfg,
                                     const std::vector<scene::ObjectLabel>& objects) {
    std::vector<Positive> out;
    std::vector<int> scale_offset(cfg.strides.size(), 0);
    for (std::size_t s = 1; s < cfg.strides.size(); ++s) {
        const int g = cfg.image_size / cfg.strides[s - 1];
        scale_offset[s] = scale_offset[s - 1] + cfg.anchors_per_scale * g * g;
    }
    for (const auto& o : objects) {
        const double w = o.box.x2 - o.box.x1, h = o.box.y2 - o.box.y1;
        const double cx = 0.5 * (o.box.x1 + o.box.x2), cy = 0.5 * (o.box.y1 + o.box.y2);
        int best_s = 0, best_a = 0;
        double best = -1;
        for (std::size_t s = 0; s < cfg.strides.size(); ++s)
            for (int a = 0; a < cfg.anchors_per_scale; ++a) {
                const double m = wh_iou(w, h, cfg.anchors[s][std::size_t(a)]);
                if (m > best) {
                    best = m;
                    best_s = int(s);
                    best_a = a;
                }
            }
        const int stride = cfg.strides[std::size_t(best_s)];
        const int g = cfg.image_size / stride;
        const int col = std::clamp(int(cx) / stride, 0, g - 1);
        const int row = std::clamp(int(cy) / stride, 0, g - 1);
        // the decode offset range of a cell covers its neighbours, so the two
        // cells nearest the centre also regress this box; duplicates from
        // neighbouring objects are deduped below
        const double fx = cx / stride - col, fy = cy / stride - row;
        const int cols[3] = {col, std::clamp(fx < 0.5 ? col - 1 : col + 1, 0, g - 1), col};
        const int rows[3] = {row, row, std::clamp(fy < 0.5 ? row - 1 : row + 1, 0, g - 1)};
        for (int k = 0; k < 3; ++k) {
            Positive p;
            p.flat = scale_offset[std::size_t(best_s)] + (best_a * g + rows[k]) * g + cols[k];
            p.class_id = o.class_id;
            p.box = o.box;
            out.push_back(p);
        }
    }
    // two objects can land on the same cell+anchor; keep the first
    std::sort(out.begin(), out.end(), [](const Positive& a, const Positive& b) {
        return a.flat < b.flat;
    });
    out.erase(std::unique(out.begin(), out.end(),
                          [](const Positive& a, const Positive& b) {
                              return a.flat == b.flat;
                          }),
              out.end());
    return out;
}

} // namespace

TrainStats train(ToyDetector& det, const std::vector<scene::Scene>& scenes,
                 const TrainParams& params) {
    if (scenes.empty()) throw ValueError("train: empty dataset");
    const DetectorConfig& cfg = det.config();
    const int n_cand = cfg.candidate_count();
    const int nc = cfg.num_classes;
    scene::Xoshiro256ss rng(params.seed ^ 0xD1B54A32D192ED03ULL);

    // per-scene target assignment is independent of the weights
    std::vector<std::vector<Positive>> targets;
    targets.reserve(scenes.size());
    for (const auto& sc : scenes) targets.push_back(assign_targets(cfg, sc.objects));

    std::vector<std::size_t> order(scenes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainStats stats;
    for (int epoch = 0; epoch < params.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[std::size_t(rng.uniform_int(0, int(i) - 1))]);

        real epoch_loss = 0;
        for (std::size_t oi = 0; oi < order.size(); ++oi) {
            const auto& sc = scenes[order[oi]];
            const auto& pos = targets[order[oi]];
            Tape tape;
            Candidates c = det.forward(tape, sc.image);

            // objectness: balanced BCE; positives carry pos_share of the
            // term, negatives the remainder
            Tensor obj_t = Tensor::zeros({n_cand});
            Tensor obj_w = Tensor::full({n_cand},
                                        pos.empty()
                                            ? real(1) / real(n_cand)
                                            : (real(1) - params.pos_share) /
                                                  real(n_cand - int(pos.size())));
            for (const auto& p : pos) {
                obj_t.data()[p.flat] = 1;
                obj_w.data()[p.flat] = params.pos_share / real(pos.size());
            }
            Tensor loss = tape.bce_with_logits(c.obj_logits, obj_t, obj_w);

            if (!pos.empty()) {
                const int np = int(pos.size());
                std::vector<int64_t> cls_idx(std::size_t(np) * nc);
                Tensor cls_t = Tensor::zeros({np, nc});
                for (int p = 0; p < np; ++p) {
                    for (int k = 0; k < nc; ++k)
                        cls_idx[std::size_t(p) * nc + k] = int64_t(pos[std::size_t(p)].flat) * nc + k;
                    cls_t.data()[std::size_t(p) * nc + pos[std::size_t(p)].class_id] = 1;
                }
                Tensor cls_l = tape.take(c.cls_logits, std::move(cls_idx), {np, nc});
                Tensor cls_w = Tensor::full({np, nc}, real(1) / real(np * nc));
                loss = tape.add(loss, tape.bce_with_logits(cls_l, cls_t, cls_w));

                std::vector<int64_t> pidx(static_cast<std::size_t>(np), 0);
                Tensor bx1 = Tensor::zeros({np}), by1 = Tensor::zeros({np});
                Tensor bx2 = Tensor::zeros({np}), by2 = Tensor::zeros({np});
                for (int p = 0; p < np; ++p) {
                    pidx[std::size_t(p)] = pos[std::size_t(p)].flat;
                    bx1.data()[p] = pos[std::size_t(p)].box.x1;
                    by1.data()[p] = pos[std::size_t(p)].box.y1;
                    bx2.data()[p] = pos[std::size_t(p)].box.x2;
                    by2.data()[p] = pos[std::size_t(p)].box.y2;
                }
                const Tensor inv_s = Tensor::scalar(real(1) / real(cfg.image_size));
                auto sq_err = [&](const Tensor& pred, const Tensor& tgt) {
                    Tensor d = tape.mul(tape.sub(tape.take(pred, pidx, {np}), tgt), inv_s);
                    return tape.mean(tape.mul(d, d));
                };
                Tensor box = tape.add(tape.add(sq_err(c.x1, bx1), sq_err(c.y1, by1)),
                                      tape.add(sq_err(c.x2, bx2), sq_err(c.y2, by2)));
                loss = tape.add(loss, tape.mul(box, Tensor::scalar(params.box_weight)));
            }

            const real lval = loss.item();
            if (!std::isfinite(lval))
                throw ValueError("train: non-finite loss at epoch " + std::to_string(epoch));
            epoch_loss += lval;

            tape.backward(loss);
            det.sgd_step(params.lr);
            det.zero_grads();
        }
        epoch_loss /= real(scenes.size());
        stats.epoch_loss.push_back(epoch_loss);
        if (params.verbose)
            std::fprintf(stderr, "epoch %3d  loss %.6f\n", epoch, double(epoch_loss));
    }
    return stats;
}

PipelineResult run_pipeline(const ToyDetector& det, const Tensor& image,
                            const nms::Params& nms_params, real conf_threshold) {
    PipelineResult r;
    auto t0 = Clock::now();
    Tape tape;
    Candidates c = det.forward(tape, image);
    r.timing.forward_ms = ms_since(t0);

    t0 = Clock::now();
    r.entries = filter_candidates(c, conf_threshold);
    r.timing.filter_ms = ms_since(t0);
    r.timing.candidates_to_nms = int(r.entries.size());

    t0 = Clock::now();
    r.nms = nms::suppress(r.entries, nms_params);
    r.timing.nms_ms = ms_since(t0);
    return r;
}

// ---- persistence ----------------------------------------------------------

namespace {

template <typename T>
std::string join_csv(const std::vector<T>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

template <typename T>
std::vector<T> split_csv(const std::string& s) {
    std::vector<T> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(T(std::stod(tok)));
    return out;
}

} // namespace

void ToyDetector::save(const std::filesystem::path& path) const {
    std::ostringstream os;
    os << "PHDET1\n";
    os << "image_size=" << cfg_.image_size << "\n";
    os << "strides=" << join_csv(cfg_.strides) << "\n";
    os << "anchors_per_scale=" << cfg_.anchors_per_scale << "\n";
    os << "num_classes=" << cfg_.num_classes << "\n";
    os << "conf_threshold=" << cfg_.conf_threshold << "\n";
    os << "widths=" << join_csv(cfg_.widths) << "\n";
    for (std::size_t s = 0; s < cfg_.anchors.size(); ++s)
        os << "anchors" << s << "=" << join_csv(cfg_.anchors[s]) << "\n";
    os << "weights=" << weights_.size() << "\n";
    for (const auto& [name, w] : weights_) {
        os << name << "\n";
        write_tnsr1(os, w);
    }
    write_file_atomic(path, os.str());
}

ToyDetector ToyDetector::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValueError("cannot open " + path.string());
    std::string line;
    std::getline(is, line);
    if (line != "PHDET1") throw ValueError(path.string() + ": not a detector file");

    DetectorConfig cfg;
    cfg.anchors.clear();
    std::size_t n_weights = 0;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ValueError("detector file: bad header line");
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "image_size") cfg.image_size = std::stoi(val);
        else if (key == "strides") cfg.strides = split_csv<int>(val);
        else if (key == "anchors_per_scale") cfg.anchors_per_scale = std::stoi(val);
        else if (key == "num_classes") cfg.num_classes = std::stoi(val);
        else if (key == "conf_threshold") cfg.conf_threshold = real(std::stod(val));
        else if (key == "widths") cfg.widths = split_csv<int>(val);
        else if (key.rfind("anchors", 0) == 0) cfg.anchors.push_back(split_csv<real>(val));
        else if (key == "weights") {
            n_weights = std::stoul(val);
            break;
        } else throw ValueError("detector file: unknown key " + key);
    }

    ToyDetector det(cfg);
    for (std::size_t i = 0; i < n_weights; ++i) {
        std::string name;
        if (!std::getline(is, name)) throw ValueError("detector file: truncated");
        Tensor w = read_tnsr1(is);
        auto it = det.weights_.find(name);
        if (it == det.weights_.end())
            throw ValueError("detector file: unexpected weight " + name);
        if (it->second.shape() != w.shape())
            throw ShapeError("detector file: weight " + name + " has shape " +
                             shape_str(w.shape()) + ", expected " +
                             shape_str(it->second.shape()));
        std::copy(w.data(), w.data() + w.numel(), it->second.data());
    }
    return det;
}

} // namespace phantom::det
