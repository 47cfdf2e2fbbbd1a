#include "vg/fusion_grounding.hpp"

#include <algorithm>
#include <cmath>

namespace vg::fusion {

using ad::Var;

Var fuse(const Var& grid_rows, const Var& text_feat, const Var& attended, const nn::Linear& proj) {
    Var g = ad::l2_normalize_rows(grid_rows, kNormEps);
    Var t = ad::l2_normalize_rows(text_feat, kNormEps);
    Var v = ad::l2_normalize_rows(attended, kNormEps);
    return proj.forward(ad::concat_cols({g, t, v}));
}

Var head(const Var& fused, const nn::Linear& head_proj) { return head_proj.forward(fused); }

Var gather_logits(const std::array<Var, 3>& head_out) {
    return ad::concat_vecs(
        {ad::head_logits(head_out[0]), ad::head_logits(head_out[1]), ad::head_logits(head_out[2])});
}

PredictionSet extract_predictions(const std::array<Var, 3>& head_out, const AnchorLayout& layout) {
    PredictionSet p;
    p.layout = &layout;
    const int m = layout.total();
    p.offsets = Tensor({m, 4});
    p.logits = Tensor({m});
    int base = 0;
    for (int k = 0; k < 3; ++k) {
        const Tensor& pk = head_out[static_cast<size_t>(k)]->value;
        const int hw = pk.dim(0);
        for (int cell = 0; cell < hw; ++cell)
            for (int a = 0; a < 3; ++a) {
                const int flat = base + cell * 3 + a;
                for (int j = 0; j < 4; ++j) p.offsets.at(flat, j) = pk.at(cell, a * 5 + j);
                p.logits[flat] = pk.at(cell, a * 5 + 4);
            }
        base += hw * 3;
    }
    // global softmax over all m logits
    p.confidence = Tensor({m});
    double mx = p.logits[0];
    for (int i = 1; i < m; ++i) mx = std::max(mx, p.logits[i]);
    double z = 0;
    for (int i = 0; i < m; ++i) {
        p.confidence[i] = std::exp(p.logits[i] - mx);
        z += p.confidence[i];
    }
    for (int i = 0; i < m; ++i) p.confidence[i] /= z;
    return p;
}

int argmax_confidence(const PredictionSet& p) {
    int best = 0;
    for (int i = 1; i < p.m(); ++i)
        if (p.confidence[i] > p.confidence[best]) best = i;
    return best;
}

Box select_box(const PredictionSet& p) {
    const int idx = argmax_confidence(p);
    const AnchorRef ref = p.layout->ref(idx);
    const std::array<double, 4> offsets = {p.offsets.at(idx, 0), p.offsets.at(idx, 1),
                                           p.offsets.at(idx, 2), p.offsets.at(idx, 3)};
    return decode_prediction(offsets, p.layout->anchors()[ref.k][ref.a], ref.r, ref.c,
                             p.layout->specs()[ref.k]);
}

}  // namespace vg::fusion
