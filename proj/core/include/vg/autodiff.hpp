#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vg/tensor.hpp"

namespace vg::ad {

// Reverse-mode autodiff over a define-by-run graph. Nodes hold values and
// (lazily allocated) gradients; ops return new nodes whose backward closures
// scatter into the parents. Parameters are long-lived nodes with
// requires_grad set; everything else is released with the graph.
struct Node {
    Tensor value;
    Tensor grad;  // empty until touched by backward
    bool requires_grad = false;
    bool needs_grad = false;  // this node or an ancestor requires grad
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    std::string name;  // non-empty for parameters

    Tensor& ensure_grad();
    bool has_grad() const { return !grad.empty(); }
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var parameter(Tensor value, std::string name);

// Root must be a scalar (shape [1]). Seeds d(root)/d(root)=1 and sweeps the
// graph in reverse topological order.
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var sigmoid(const Var& a);
Var tanh_op(const Var& a);

// ---- matrix / vector ----
Var matmul(const Var& a, const Var& b);            // [p,q]x[q,r] -> [p,r]
Var matmul_nt(const Var& a, const Var& b);         // [p,q]x[r,q] -> a.b^T [p,r]
Var linear(const Var& x, const Var& w, const Var& b);  // x[n,k], w[m,k], b[m] -> [n,m]
Var matvec(const Var& w, const Var& x);            // w[m,k], x[k] -> [m]
Var take_row(const Var& x, int row);               // [n,m] -> [m]
Var segment(const Var& x, int offset, int len);    // [n] -> [len]
Var concat_vecs(const std::vector<Var>& xs);       // [Li] -> [sum Li]
Var concat_cols(const std::vector<Var>& xs);       // [R,Ci] -> [R,sum Ci]
Var stack_rows(const std::vector<Var>& rows);      // n x [m] -> [n,m]
Var sum_all(const Var& x);                         // -> [1]
Var mean_all(const Var& x);                        // -> [1]

// ---- attention / fusion primitives ----
// Row softmax over the first `valid_cols` columns; remaining columns get 0.
Var softmax_rows(const Var& x, int valid_cols);
// Row sums over the first `valid_cols` columns -> [R].
Var row_sums(const Var& x, int valid_cols);
// Each row divided by max(||row||_2, eps).
Var l2_normalize_rows(const Var& x, double eps);
// Row i scaled by s[i]; x[R,C], s[R].
Var scale_rows(const Var& x, const Var& s);

// ---- conv / spatial (NCHW) ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample2x(const Var& x);
Var concat_channels(const Var& a, const Var& b);
Var batch_slice(const Var& x, int b);              // [B,C,H,W] -> [C,H,W]
Var grid_rows(const Var& x);                       // [C,H,W] -> [H*W, C] row-major cells
Var add_batch_dim(const Var& x);                   // [C,H,W] -> [1,C,H,W]

// Batch norm over (B,H,W) per channel. In training mode normalizes with batch
// statistics and pushes the running estimates (momentum update); in eval mode
// uses the provided running stats. running_* outlive the graph.
Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta,
                Tensor& running_mean, Tensor& running_var,
                bool training, double momentum = 0.1, double eps = 1e-5);

// ---- embedding ----
Var embedding_rows(const Var& table, const std::vector<int>& ids);  // -> [n,E]

// ---- losses ----
// -log softmax(logits)[target], log-sum-exp stabilized. logits: [m].
Var softmax_xent(const Var& logits, int target);
// Mean binary cross-entropy from logits against 0/1 targets (same numel),
// computed as softplus(s) - y*s per element.
Var bce_logits_mean(const Var& logits, const Tensor& targets);
// Squared error on (sigmoid(tx), sigmoid(ty), tw, th) vs the encoded target.
Var box_reg_loss(const Var& pred4, const Tensor& target4);

// ---- yolo-style head helpers ----
// P[HW,15] with channel layout anchor-major (a*5 + {tx,ty,tw,th,logit}).
Var head_logits(const Var& p);                       // -> [HW*3], index cell*3+a
Var head_offsets_at(const Var& p, int cell, int anchor);  // -> [4]

}  // namespace vg::ad
