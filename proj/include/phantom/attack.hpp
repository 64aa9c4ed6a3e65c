#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "phantom/detector.hpp"

namespace phantom::atk {

enum class Norm { Linf, L2 };

struct AttackParams {
    real conf_threshold = real(0.25);
    // loss mix: alpha on the candidate-overflow term, (1-alpha) on the
    // detection-preservation term
    real alpha = real(1.0);
    // Linf: per-channel amplitude in 0..255 pixel units; L2: norm bound on
    // the whole perturbation (same units, i.e. 255 * normalized L2 norm)
    real epsilon = real(30);
    Norm norm = Norm::Linf;
    int epochs = 50;
    real step = real(1) / 255; // Linf sign-step size; ignored for L2
    // normalize the overflow term by the total candidate count instead of
    // the below-threshold count
    bool overflow_over_total = false;
    real iou_threshold = real(0.45); // NMS used by the preservation term
    std::uint64_t seed = 1;
    bool verbose = false;
};

struct CraftStats {
    std::vector<real> epoch_loss; // mean loss per epoch
    int clip_events = 0;          // projections that actually clipped
    // steps after which delta still exceeded the budget (always 0 unless
    // the projection itself is broken)
    int projection_violations = 0;
    int empty_overflow_sets = 0;  // steps where no candidate was below threshold
    bool aborted = false;         // non-finite loss; delta is the last valid one
};

struct CraftResult {
    Tensor delta; // [3,S,S], normalized pixel units
    CraftStats stats;
};

// Hinge on a single candidate's best unconditional score:
//   max(0, T - obj * cls).  All arguments are tape tensors.
Tensor loss_single_conf(Tape& tape, const Tensor& obj, const Tensor& cls, real threshold);

// Mean hinge over the candidates currently at or below the threshold (the
// set is frozen for this evaluation; gradients flow through the scores
// only). Empty set: returns constant 0 and reports it via `empty_set`.
// With over_total the sum is divided by the full candidate count instead.
Tensor loss_max_objects(Tape& tape, const det::Candidates& c, real threshold,
                        bool over_total = false, bool* empty_set = nullptr);

// Mean over the clean final boxes of (1 - best IoU against the perturbed
// final boxes). Which perturbed candidates count as final is frozen
// (pert_final holds their flat candidate indices); gradients flow through
// their coordinates. Empty clean set: constant 0. Empty perturbed set:
// constant 1.
Tensor loss_max_iou(Tape& tape, const det::Candidates& pert,
                    const std::vector<nms::Box>& clean_final,
                    const std::vector<int>& pert_final);

// alpha * overflow + (1 - alpha) * preservation, with the endpoint values
// skipping the unused term entirely.
Tensor loss_total(Tape& tape, const det::Candidates& pert,
                  const std::vector<nms::Box>& clean_final,
                  const std::vector<int>& pert_final, const AttackParams& p,
                  bool* empty_set = nullptr);

// Projects delta into the epsilon-ball in place; returns true if any value
// actually changed.
bool project(Tensor& delta, const AttackParams& p);

// clamp(image + delta, 0, 1), plain tensors
Tensor apply(const Tensor& image, const Tensor& delta);

// Projected gradient descent for a universal perturbation against one or
// more detectors (gradients averaged across the ensemble).
CraftResult craft_uap(const std::vector<const det::ToyDetector*>& dets,
                      const std::vector<scene::Scene>& train, const AttackParams& p);

void save_perturbation(const std::filesystem::path& path, const Tensor& delta,
                       const AttackParams& p);
Tensor load_perturbation(const std::filesystem::path& path,
                         AttackParams* params_out = nullptr);

// grey-centered rendering of a perturbation for PPM export
Tensor visualize_delta(const Tensor& delta, real epsilon);

} // namespace phantom::atk
