#pragma once

#include <array>

#include "vg/geometry.hpp"
#include "vg/nn.hpp"

namespace vg::fusion {

inline constexpr double kNormEps = 1e-8;

// Per-cell fusion: l2-normalize each of G, T', V, concatenate to 3D channels
// and project to D' with a learned 1x1 convolution (a per-row affine map).
ad::Var fuse(const ad::Var& grid_rows, const ad::Var& text_feat, const ad::Var& attended,
             const nn::Linear& proj);

// Grounding head at one resolution: F[HW,D'] -> [HW, 15]; channel layout is
// anchor-major (a*5 + {tx,ty,tw,th,conf}).
ad::Var head(const ad::Var& fused, const nn::Linear& head_proj);

// Flat confidence logits over all resolutions, resolution-major, row-major
// cells, anchor-minor. Inputs are the three head outputs (k=0 first).
ad::Var gather_logits(const std::array<ad::Var, 3>& head_out);

// All m anchor predictions plus the global softmax confidence.
struct PredictionSet {
    Tensor offsets;     // [m, 4]
    Tensor logits;      // [m]
    Tensor confidence;  // [m], sums to 1
    const AnchorLayout* layout = nullptr;

    int m() const { return layout->total(); }
};

PredictionSet extract_predictions(const std::array<ad::Var, 3>& head_out,
                                  const AnchorLayout& layout);

// Index of the highest-confidence anchor (ties -> lowest index).
int argmax_confidence(const PredictionSet& p);

// Decode the argmax anchor into a box in network-input pixel coordinates.
Box select_box(const PredictionSet& p);

}  // namespace vg::fusion
