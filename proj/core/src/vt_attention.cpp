#include "vg/vt_attention.hpp"

namespace vg::attn {

using ad::Var;

Var match_matrix(const Var& grid_rows, const Var& qprime) {
    return ad::matmul_nt(grid_rows, qprime);
}

Var word_attention(const Var& match, int n_valid) { return ad::softmax_rows(match, n_valid); }

Var text_feature_matrix(const Var& alpha, const Var& qprime) { return ad::matmul(alpha, qprime); }

Var attention_map_logits(const Var& match, int n_valid) { return ad::row_sums(match, n_valid); }

Var attention_map(const Var& match, int n_valid) {
    return ad::sigmoid(attention_map_logits(match, n_valid));
}

Var attend_visual(const Var& beta, const Var& grid_rows) { return ad::scale_rows(grid_rows, beta); }

CrossModalState cross_modal(const Var& grid_rows, const Var& qprime, int n_valid) {
    CrossModalState s;
    s.match = match_matrix(grid_rows, qprime);
    s.alpha = word_attention(s.match, n_valid);
    s.text_feat = text_feature_matrix(s.alpha, qprime);
    s.beta_logits = attention_map_logits(s.match, n_valid);
    s.beta = ad::sigmoid(s.beta_logits);
    s.attended = attend_visual(s.beta, grid_rows);
    return s;
}

}  // namespace vg::attn
