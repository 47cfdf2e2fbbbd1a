#pragma once

#include "vg/autodiff.hpp"

namespace vg::attn {

// Cross-modal state at one resolution. All matrices use row-major cell
// flattening (cell = r*W + c).
struct CrossModalState {
    ad::Var match;        // M    [HW, n]
    ad::Var alpha;        // word attention, row-stochastic [HW, n]
    ad::Var text_feat;    // T'   [HW, D]
    ad::Var beta_logits;  // row sums of M  [HW]
    ad::Var beta;         // sigmoid(beta_logits), each in (0,1)  [HW]
    ad::Var attended;     // V = beta (.) G  [HW, D]
};

// M = G . Q'^T; entry (i,j) is the dot product of cell i and word j.
ad::Var match_matrix(const ad::Var& grid_rows, const ad::Var& qprime);

// Row softmax of M over the first n_valid words (padded words masked out).
ad::Var word_attention(const ad::Var& match, int n_valid);

// T' = alpha . Q'.
ad::Var text_feature_matrix(const ad::Var& alpha, const ad::Var& qprime);

// Pre-sigmoid attention scores: row sums of M over valid words.
ad::Var attention_map_logits(const ad::Var& match, int n_valid);

// sigmoid(row sums), each entry strictly inside (0,1).
ad::Var attention_map(const ad::Var& match, int n_valid);

// V: each cell feature scaled by its attention value.
ad::Var attend_visual(const ad::Var& beta, const ad::Var& grid_rows);

CrossModalState cross_modal(const ad::Var& grid_rows, const ad::Var& qprime, int n_valid);

}  // namespace vg::attn
