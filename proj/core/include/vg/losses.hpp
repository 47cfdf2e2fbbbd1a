#pragma once

#include <array>

#include "vg/fusion_grounding.hpp"
#include "vg/geometry.hpp"

namespace vg::losses {

struct LossBreakdown {
    std::array<double, 3> mask_k{};  // per-resolution mask loss
    double mask_total = 0;
    double confidence = 0;
    double box = 0;
    double yolo = 0;   // confidence + box
    double total = 0;  // yolo + lambda * mask_total
    double lambda = 0;
};

// Supervision for one sample: the one-hot anchor target, its encoded box
// offsets, and the three rasterized masks.
struct GroundingTarget {
    int target_index = 0;
    std::array<double, 4> target_offsets{};
    std::array<BinaryMask, 3> masks;
};

// Inverse of decode_prediction. gt must have positive width/height; the
// sigmoid inverse inputs are clamped to [1e-6, 1-1e-6].
std::array<double, 4> encode_gt_offsets(const Box& gt, const AnchorBox& anchor, int row, int col,
                                        const GridSpec& spec);

GroundingTarget make_target(const Box& gt, const AnchorLayout& layout);

// Mean binary cross-entropy between the attention map and the rasterized
// mask, computed from pre-sigmoid scores for stability.
ad::Var mask_loss_k(const ad::Var& beta_logits, const BinaryMask& mask);
// Value-level twin on probabilities (used where no graph is wanted).
double mask_loss_value(const Tensor& beta_probs, const BinaryMask& mask);

ad::Var mask_loss_total(const std::array<ad::Var, 3>& parts);

// -log softmax(logits)[target_index].
ad::Var confidence_loss(const ad::Var& logits, int target_index);

// Squared error on (sigmoid tx, sigmoid ty, tw, th) at the target anchor.
ad::Var box_regression_loss(const ad::Var& pred_offsets, const std::array<double, 4>& target);

LossBreakdown total_loss(double confidence, double box, const std::array<double, 3>& mask_k,
                         double lambda);

// Full per-sample objective. The returned Var is what the trainer backprops:
// yolo + lambda*mask; with lambda == 0 the mask losses are still evaluated
// for logging but stay out of the gradient path.
struct SampleLoss {
    ad::Var objective;
    LossBreakdown values;
};

SampleLoss grounding_loss(const std::array<ad::Var, 3>& beta_logits, const ad::Var& logits_flat,
                          const std::array<ad::Var, 3>& head_out, const GroundingTarget& target,
                          const AnchorLayout& layout, double lambda);

}  // namespace vg::losses
