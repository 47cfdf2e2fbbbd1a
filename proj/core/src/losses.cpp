#include "vg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vg::losses {

using ad::Var;

std::array<double, 4> encode_gt_offsets(const Box& gt, const AnchorBox& anchor, int row, int col,
                                        const GridSpec& spec) {
    if (gt.w <= 0 || gt.h <= 0)
        throw std::invalid_argument("encode_gt_offsets: gt must have positive width and height");
    auto logit = [](double p) {
        p = std::clamp(p, 1e-6, 1.0 - 1e-6);
        return std::log(p / (1.0 - p));
    };
    const double fx = gt.cx() / spec.stride - col;
    const double fy = gt.cy() / spec.stride - row;
    return {logit(fx), logit(fy), std::log(gt.w / anchor.pw), std::log(gt.h / anchor.ph)};
}

GroundingTarget make_target(const Box& gt, const AnchorLayout& layout) {
    GroundingTarget t;
    t.target_index = assign_best_anchor(gt, layout);
    const AnchorRef ref = layout.ref(t.target_index);
    t.target_offsets = encode_gt_offsets(gt, layout.anchors()[ref.k][ref.a], ref.r, ref.c,
                                         layout.specs()[ref.k]);
    for (int k = 0; k < 3; ++k)
        t.masks[static_cast<size_t>(k)] = rasterize_mask(gt, layout.specs()[k]);
    return t;
}

Var mask_loss_k(const Var& beta_logits, const BinaryMask& mask) {
    if (beta_logits->value.numel() != static_cast<std::int64_t>(mask.h) * mask.w)
        throw ShapeError("mask_loss_k: grid size mismatch");
    return ad::bce_logits_mean(beta_logits, mask.to_tensor());
}

double mask_loss_value(const Tensor& beta_probs, const BinaryMask& mask) {
    const std::int64_t n = beta_probs.numel();
    if (n != static_cast<std::int64_t>(mask.h) * mask.w)
        throw ShapeError("mask_loss_value: grid size mismatch");
    double acc = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double y = mask.values[static_cast<size_t>(i)] ? 1.0 : 0.0;
        acc -= y * std::log(beta_probs[i]) + (1.0 - y) * std::log(1.0 - beta_probs[i]);
    }
    return acc / static_cast<double>(n);
}

Var mask_loss_total(const std::array<Var, 3>& parts) {
    return ad::add(ad::add(parts[0], parts[1]), parts[2]);
}

Var confidence_loss(const Var& logits, int target_index) {
    return ad::softmax_xent(logits, target_index);
}

Var box_regression_loss(const Var& pred_offsets, const std::array<double, 4>& target) {
    return ad::box_reg_loss(pred_offsets,
                            Tensor::from({4}, {target[0], target[1], target[2], target[3]}));
}

LossBreakdown total_loss(double confidence, double box, const std::array<double, 3>& mask_k,
                         double lambda) {
    LossBreakdown b;
    b.mask_k = mask_k;
    b.mask_total = mask_k[0] + mask_k[1] + mask_k[2];
    b.confidence = confidence;
    b.box = box;
    b.yolo = confidence + box;
    b.lambda = lambda;
    b.total = b.yolo + lambda * b.mask_total;
    return b;
}

SampleLoss grounding_loss(const std::array<Var, 3>& beta_logits, const Var& logits_flat,
                          const std::array<Var, 3>& head_out, const GroundingTarget& target,
                          const AnchorLayout& layout, double lambda) {
    const AnchorRef ref = layout.ref(target.target_index);
    const int cell = ref.r * layout.specs()[ref.k].w + ref.c;

    Var conf = confidence_loss(logits_flat, target.target_index);
    Var pred4 = ad::head_offsets_at(head_out[static_cast<size_t>(ref.k)], cell, ref.a);
    Var box = box_regression_loss(pred4, target.target_offsets);
    std::array<Var, 3> mask;
    for (int k = 0; k < 3; ++k)
        mask[static_cast<size_t>(k)] =
            mask_loss_k(beta_logits[static_cast<size_t>(k)], target.masks[static_cast<size_t>(k)]);

    SampleLoss out;
    Var yolo = ad::add(conf, box);
    if (lambda != 0.0)
        out.objective = ad::add(yolo, ad::scale(mask_loss_total(mask), lambda));
    else
        out.objective = yolo;  // mask losses evaluated for logging only
    out.values = total_loss(conf->value[0], box->value[0],
                            {mask[0]->value[0], mask[1]->value[0], mask[2]->value[0]}, lambda);
    return out;
}

}  // namespace vg::losses
