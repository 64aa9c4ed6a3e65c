#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "phantom/autodiff.hpp"
#include "phantom/nms.hpp"
#include "phantom/scenegen.hpp"
#include "phantom/tensor.hpp"

namespace phantom::det {

// Grid detector over three feature-map scales. Each cell predicts
// `anchors_per_scale` boxes as offsets relative to its anchor:
//   cx = (2*sigmoid(tx) - 0.5 + col) * stride
//   w  = (2*sigmoid(tw))^2 * anchor_w          (same for cy / h)
// so a cell can place its center up to half a cell outside itself and scale
// its anchor by a factor in (0, 4).
struct DetectorConfig {
    int image_size = 160;
    std::vector<int> strides{8, 16, 32};
    int anchors_per_scale = 3;
    int num_classes = 4;
    real conf_threshold = real(0.25);
    // backbone widths per downsampling conv (one per stride step to x32)
    std::vector<int> widths{16, 32, 64, 64, 64};
    // square anchor side per scale/anchor, pixels
    std::vector<std::vector<real>> anchors{{14, 20, 26}, {28, 36, 44}, {48, 60, 76}};

    // A * sum over scales of (S/stride)^2
    int candidate_count() const;
    void validate() const;
};

// Decoded predictions for one image, connected to the tape that produced
// them. Probabilities (obj, cls) come after the sigmoid; the logit tensors
// are kept for loss computation. Box coordinates are in pixels.
struct Candidates {
    Tensor obj;                    // [N]
    Tensor cls;                    // [N, Nc], conditional class probabilities
    Tensor obj_logits, cls_logits; // same shapes, pre-sigmoid
    Tensor x1, y1, x2, y2;         // [N]
    std::vector<int> scale, anchor, row, col; // provenance per candidate
    int count() const { return int(scale.size()); }
};

class ToyDetector {
public:
    explicit ToyDetector(DetectorConfig cfg = {});

    void init_weights(std::uint64_t seed);
    Candidates forward(Tape& tape, const Tensor& image) const;

    const DetectorConfig& config() const { return cfg_; }
    std::map<std::string, Tensor>& weights() { return weights_; }
    const std::map<std::string, Tensor>& weights() const { return weights_; }

    void zero_grads();
    void sgd_step(real lr);

    void save(const std::filesystem::path& path) const;
    static ToyDetector load(const std::filesystem::path& path);

private:
    DetectorConfig cfg_;
    std::map<std::string, Tensor> weights_;
};

// Unconditional score of candidate i for class c is obj[i] * cls[i][c].
// A candidate survives the confidence filter iff its objectness and its best
// unconditional class score are both strictly above the threshold. Entries
// carry the argmax class and that best score; `index` is the flat candidate
// index (also written to kept_idx when given).
std::vector<nms::Entry> filter_candidates(const Candidates& c, real conf_threshold,
                                          std::vector<int>* kept_idx = nullptr);

struct TrainParams {
    int epochs = 40;
    real lr = real(0.1);
    real box_weight = real(2.0);
    real pos_share = real(0.5); // fraction of the objectness term carried by positives
    std::uint64_t seed = 1;
    bool verbose = false;
};

struct TrainStats {
    std::vector<real> epoch_loss; // mean per-image loss, one entry per epoch
};

// Plain stochastic gradient descent; throws ValueError if the loss goes
// non-finite. Each labelled object is assigned to the anchor whose size
// best matches it, at the cell containing the object center.
TrainStats train(ToyDetector& det, const std::vector<scene::Scene>& scenes,
                 const TrainParams& params);

struct StageTiming {
    double forward_ms = 0;
    double filter_ms = 0;
    double nms_ms = 0;
    int candidates_to_nms = 0;
};

struct PipelineResult {
    std::vector<nms::Entry> entries; // post-filter, pre-NMS
    nms::Result nms;
    StageTiming timing;
};

// forward -> confidence filter -> NMS, each stage timed once.
PipelineResult run_pipeline(const ToyDetector& det, const Tensor& image,
                            const nms::Params& nms_params, real conf_threshold);

} // namespace phantom::det
