#include "vg/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace vg::ad {

namespace {

using EMat = Eigen::MatrixXd;
using EMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ECMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

EMap map2d(Tensor& t, int rows, int cols) { return EMap(t.data(), rows, cols); }
ECMap map2d(const Tensor& t, int rows, int cols) { return ECMap(t.data(), rows, cols); }

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->needs_grad) n->needs_grad = true;
    if (n->needs_grad) n->backward_fn = std::move(bw);
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw ShapeError(std::string(op) + ": shape mismatch " + a->value.shape_str() + " vs " +
                         b->value.shape_str());
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

Tensor& Node::ensure_grad() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
}

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return n;
}

Var parameter(Tensor value, std::string name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->needs_grad = true;
    n->name = std::move(name);
    return n;
}

void backward(const Var& root) {
    if (root->value.numel() != 1) throw ShapeError("backward: root must be scalar");
    // post-order DFS, iterative
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->needs_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
    }
}

// ---------------- elementwise ----------------

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a->value;
    out.add_scaled(b->value, 1.0);
    return make_node(std::move(out), {a, b}, [](Node& self) {
        for (int i = 0; i < 2; ++i) {
            auto& p = self.parents[i];
            if (p->needs_grad) p->ensure_grad().add_scaled(self.grad, 1.0);
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a->value;
    out.add_scaled(b->value, -1.0);
    return make_node(std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->needs_grad) self.parents[0]->ensure_grad().add_scaled(self.grad, 1.0);
        if (self.parents[1]->needs_grad) self.parents[1]->ensure_grad().add_scaled(self.grad, -1.0);
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a->value.shape());
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        const std::int64_t n = self.value.numel();
        auto& a = self.parents[0];
        auto& b = self.parents[1];
        if (a->needs_grad) {
            Tensor& ga = a->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) ga[i] += self.grad[i] * b->value[i];
        }
        if (b->needs_grad) {
            Tensor& gb = b->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) gb[i] += self.grad[i] * a->value[i];
        }
    });
}

Var scale(const Var& a, double c) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    return make_node(std::move(out), {a}, [c](Node& self) {
        self.parents[0]->ensure_grad().add_scaled(self.grad, c);
    });
}

Var relu(const Var& a) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0 ? out[i] : 0.0;
    return make_node(std::move(out), {a}, [](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        const Tensor& x = self.parents[0]->value;
        for (std::int64_t i = 0; i < x.numel(); ++i)
            if (x[i] > 0) g[i] += self.grad[i];
    });
}

Var leaky_relu(const Var& a, double slope) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0 ? out[i] : slope * out[i];
    return make_node(std::move(out), {a}, [slope](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        const Tensor& x = self.parents[0]->value;
        for (std::int64_t i = 0; i < x.numel(); ++i) g[i] += self.grad[i] * (x[i] > 0 ? 1.0 : slope);
    });
}

Var sigmoid(const Var& a) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return make_node(std::move(out), {a}, [](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < self.value.numel(); ++i) {
            const double y = self.value[i];
            g[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

Var tanh_op(const Var& a) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
    return make_node(std::move(out), {a}, [](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < self.value.numel(); ++i) {
            const double y = self.value[i];
            g[i] += self.grad[i] * (1.0 - y * y);
        }
    });
}

// ---------------- matrix / vector ----------------

Var matmul(const Var& a, const Var& b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(0))
        throw ShapeError("matmul: incompatible " + a->value.shape_str() + " x " + b->value.shape_str());
    const int p = a->value.dim(0), q = a->value.dim(1), r = b->value.dim(1);
    Tensor out({p, r});
    map2d(out, p, r).noalias() = map2d(a->value, p, q) * map2d(b->value, q, r);
    return make_node(std::move(out), {a, b}, [p, q, r](Node& self) {
        auto gy = map2d(self.grad, p, r);
        if (self.parents[0]->needs_grad)
            map2d(self.parents[0]->ensure_grad(), p, q).noalias() +=
                gy * map2d(self.parents[1]->value, q, r).transpose();
        if (self.parents[1]->needs_grad)
            map2d(self.parents[1]->ensure_grad(), q, r).noalias() +=
                map2d(self.parents[0]->value, p, q).transpose() * gy;
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(1))
        throw ShapeError("matmul_nt: incompatible " + a->value.shape_str() + " x " + b->value.shape_str());
    const int p = a->value.dim(0), q = a->value.dim(1), r = b->value.dim(0);
    Tensor out({p, r});
    map2d(out, p, r).noalias() = map2d(a->value, p, q) * map2d(b->value, r, q).transpose();
    return make_node(std::move(out), {a, b}, [p, q, r](Node& self) {
        auto gy = map2d(self.grad, p, r);
        if (self.parents[0]->needs_grad)
            map2d(self.parents[0]->ensure_grad(), p, q).noalias() +=
                gy * map2d(self.parents[1]->value, r, q);
        if (self.parents[1]->needs_grad)
            map2d(self.parents[1]->ensure_grad(), r, q).noalias() +=
                gy.transpose() * map2d(self.parents[0]->value, p, q);
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    if (x->value.ndim() != 2 || w->value.ndim() != 2 || x->value.dim(1) != w->value.dim(1))
        throw ShapeError("linear: incompatible " + x->value.shape_str() + " with " + w->value.shape_str());
    const int n = x->value.dim(0), k = x->value.dim(1), m = w->value.dim(0);
    if (b->value.numel() != m) throw ShapeError("linear: bias size mismatch");
    Tensor out({n, m});
    map2d(out, n, m).noalias() = map2d(x->value, n, k) * map2d(w->value, m, k).transpose();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.at(i, j) += b->value[j];
    return make_node(std::move(out), {x, w, b}, [n, k, m](Node& self) {
        auto gy = map2d(self.grad, n, m);
        auto& x = self.parents[0];
        auto& w = self.parents[1];
        auto& b = self.parents[2];
        if (x->needs_grad)
            map2d(x->ensure_grad(), n, k).noalias() += gy * map2d(w->value, m, k);
        if (w->needs_grad)
            map2d(w->ensure_grad(), m, k).noalias() += gy.transpose() * map2d(x->value, n, k);
        if (b->needs_grad) {
            Tensor& gb = b->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) gb[j] += self.grad.at(i, j);
        }
    });
}

Var matvec(const Var& w, const Var& x) {
    if (w->value.ndim() != 2 || x->value.ndim() != 1 || w->value.dim(1) != x->value.dim(0))
        throw ShapeError("matvec: incompatible " + w->value.shape_str() + " x " + x->value.shape_str());
    const int m = w->value.dim(0), k = w->value.dim(1);
    Tensor out({m});
    Eigen::Map<Eigen::VectorXd>(out.data(), m).noalias() =
        map2d(w->value, m, k) * Eigen::Map<const Eigen::VectorXd>(x->value.data(), k);
    return make_node(std::move(out), {w, x}, [m, k](Node& self) {
        Eigen::Map<const Eigen::VectorXd> gy(self.grad.data(), m);
        auto& w = self.parents[0];
        auto& x = self.parents[1];
        if (w->needs_grad)
            map2d(w->ensure_grad(), m, k).noalias() +=
                gy * Eigen::Map<const Eigen::VectorXd>(x->value.data(), k).transpose();
        if (x->needs_grad)
            Eigen::Map<Eigen::VectorXd>(x->ensure_grad().data(), k).noalias() +=
                map2d(w->value, m, k).transpose() * gy;
    });
}

Var take_row(const Var& x, int row) {
    const int m = x->value.dim(1);
    Tensor out({m});
    for (int j = 0; j < m; ++j) out[j] = x->value.at(row, j);
    return make_node(std::move(out), {x}, [row, m](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (int j = 0; j < m; ++j) g.at(row, j) += self.grad[j];
    });
}

Var segment(const Var& x, int offset, int len) {
    Tensor out({len});
    for (int i = 0; i < len; ++i) out[i] = x->value[offset + i];
    return make_node(std::move(out), {x}, [offset, len](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (int i = 0; i < len; ++i) g[offset + i] += self.grad[i];
    });
}

Var concat_vecs(const std::vector<Var>& xs) {
    int total = 0;
    for (const auto& x : xs) total += static_cast<int>(x->value.numel());
    Tensor out({total});
    int off = 0;
    for (const auto& x : xs) {
        for (std::int64_t i = 0; i < x->value.numel(); ++i) out[off + i] = x->value[i];
        off += static_cast<int>(x->value.numel());
    }
    return make_node(std::move(out), xs, [](Node& self) {
        int off = 0;
        for (auto& p : self.parents) {
            const int n = static_cast<int>(p->value.numel());
            if (p->needs_grad) {
                Tensor& g = p->ensure_grad();
                for (int i = 0; i < n; ++i) g[i] += self.grad[off + i];
            }
            off += n;
        }
    });
}

Var concat_cols(const std::vector<Var>& xs) {
    const int rows = xs.front()->value.dim(0);
    int total = 0;
    for (const auto& x : xs) {
        if (x->value.dim(0) != rows) throw ShapeError("concat_cols: row mismatch");
        total += x->value.dim(1);
    }
    Tensor out({rows, total});
    int off = 0;
    for (const auto& x : xs) {
        const int c = x->value.dim(1);
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < c; ++j) out.at(r, off + j) = x->value.at(r, j);
        off += c;
    }
    return make_node(std::move(out), xs, [rows](Node& self) {
        int off = 0;
        for (auto& p : self.parents) {
            const int c = p->value.dim(1);
            if (p->needs_grad) {
                Tensor& g = p->ensure_grad();
                for (int r = 0; r < rows; ++r)
                    for (int j = 0; j < c; ++j) g.at(r, j) += self.grad.at(r, off + j);
            }
            off += c;
        }
    });
}

Var stack_rows(const std::vector<Var>& rows) {
    const int n = static_cast<int>(rows.size());
    const int m = static_cast<int>(rows.front()->value.numel());
    Tensor out({n, m});
    for (int i = 0; i < n; ++i) {
        if (rows[i]->value.numel() != m) throw ShapeError("stack_rows: length mismatch");
        for (int j = 0; j < m; ++j) out.at(i, j) = rows[i]->value[j];
    }
    return make_node(std::move(out), rows, [m](Node& self) {
        for (size_t i = 0; i < self.parents.size(); ++i) {
            auto& p = self.parents[i];
            if (!p->needs_grad) continue;
            Tensor& g = p->ensure_grad();
            for (int j = 0; j < m; ++j) g[j] += self.grad.at(static_cast<int>(i), j);
        }
    });
}

Var sum_all(const Var& x) {
    double s = 0;
    for (std::int64_t i = 0; i < x->value.numel(); ++i) s += x->value[i];
    return make_node(Tensor::scalar(s), {x}, [](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        const double gy = self.grad[0];
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += gy;
    });
}

Var mean_all(const Var& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x->value.numel())); }

// ---------------- attention primitives ----------------

Var softmax_rows(const Var& x, int valid_cols) {
    const int rows = x->value.dim(0), cols = x->value.dim(1);
    if (valid_cols < 1 || valid_cols > cols) throw ShapeError("softmax_rows: bad valid_cols");
    Tensor out({rows, cols});
    for (int r = 0; r < rows; ++r) {
        double mx = x->value.at(r, 0);
        for (int j = 1; j < valid_cols; ++j) mx = std::max(mx, x->value.at(r, j));
        double z = 0;
        for (int j = 0; j < valid_cols; ++j) {
            const double e = std::exp(x->value.at(r, j) - mx);
            out.at(r, j) = e;
            z += e;
        }
        for (int j = 0; j < valid_cols; ++j) out.at(r, j) /= z;
    }
    return make_node(std::move(out), {x}, [rows, valid_cols](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (int r = 0; r < rows; ++r) {
            double dot = 0;
            for (int j = 0; j < valid_cols; ++j) dot += self.grad.at(r, j) * self.value.at(r, j);
            for (int j = 0; j < valid_cols; ++j)
                g.at(r, j) += self.value.at(r, j) * (self.grad.at(r, j) - dot);
        }
    });
}

Var row_sums(const Var& x, int valid_cols) {
    const int rows = x->value.dim(0), cols = x->value.dim(1);
    if (valid_cols < 1 || valid_cols > cols) throw ShapeError("row_sums: bad valid_cols");
    Tensor out({rows});
    for (int r = 0; r < rows; ++r) {
        double s = 0;
        for (int j = 0; j < valid_cols; ++j) s += x->value.at(r, j);
        out[r] = s;
    }
    return make_node(std::move(out), {x}, [rows, valid_cols](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < valid_cols; ++j) g.at(r, j) += self.grad[r];
    });
}

Var l2_normalize_rows(const Var& x, double eps) {
    const int rows = x->value.dim(0), cols = x->value.dim(1);
    Tensor out({rows, cols});
    Tensor norms({rows});
    for (int r = 0; r < rows; ++r) {
        double s = 0;
        for (int j = 0; j < cols; ++j) s += x->value.at(r, j) * x->value.at(r, j);
        norms[r] = std::max(std::sqrt(s), eps);
        for (int j = 0; j < cols; ++j) out.at(r, j) = x->value.at(r, j) / norms[r];
    }
    return make_node(std::move(out), {x}, [rows, cols, norms, eps](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (int r = 0; r < rows; ++r) {
            const double nr = norms[r];
            // below the eps floor the map is linear: y = x / eps
            double raw = 0;
            for (int j = 0; j < cols; ++j) raw += self.parents[0]->value.at(r, j) * self.parents[0]->value.at(r, j);
            const bool clamped = std::sqrt(raw) < eps;
            if (clamped) {
                for (int j = 0; j < cols; ++j) g.at(r, j) += self.grad.at(r, j) / eps;
            } else {
                double dot = 0;
                for (int j = 0; j < cols; ++j) dot += self.grad.at(r, j) * self.value.at(r, j);
                for (int j = 0; j < cols; ++j)
                    g.at(r, j) += (self.grad.at(r, j) - self.value.at(r, j) * dot) / nr;
            }
        }
    });
}

Var scale_rows(const Var& x, const Var& s) {
    const int rows = x->value.dim(0), cols = x->value.dim(1);
    if (s->value.numel() != rows) throw ShapeError("scale_rows: scale length mismatch");
    Tensor out({rows, cols});
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < cols; ++j) out.at(r, j) = x->value.at(r, j) * s->value[r];
    return make_node(std::move(out), {x, s}, [rows, cols](Node& self) {
        auto& x = self.parents[0];
        auto& s = self.parents[1];
        if (x->needs_grad) {
            Tensor& g = x->ensure_grad();
            for (int r = 0; r < rows; ++r)
                for (int j = 0; j < cols; ++j) g.at(r, j) += self.grad.at(r, j) * s->value[r];
        }
        if (s->needs_grad) {
            Tensor& g = s->ensure_grad();
            for (int r = 0; r < rows; ++r) {
                double acc = 0;
                for (int j = 0; j < cols; ++j) acc += self.grad.at(r, j) * x->value.at(r, j);
                g[r] += acc;
            }
        }
    });
}

// ---------------- conv / spatial ----------------

namespace {

struct ConvDims {
    int B, C, H, W, F, kh, kw, Ho, Wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
    ConvDims d;
    d.B = x.dim(0);
    d.C = x.dim(1);
    d.H = x.dim(2);
    d.W = x.dim(3);
    d.F = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
    d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
    return d;
}

// col: K x (B*Ho*Wo), column-major Eigen matrix; K = C*kh*kw
EMat im2col(const Tensor& x, const ConvDims& d, int stride, int pad) {
    const int K = d.C * d.kh * d.kw;
    EMat col(K, static_cast<long>(d.B) * d.Ho * d.Wo);
    for (int b = 0; b < d.B; ++b) {
        const double* xb = x.data() + static_cast<size_t>(b) * d.C * d.H * d.W;
        long colbase = static_cast<long>(b) * d.Ho * d.Wo;
        for (int oy = 0; oy < d.Ho; ++oy) {
            for (int ox = 0; ox < d.Wo; ++ox) {
                const long cidx = colbase + static_cast<long>(oy) * d.Wo + ox;
                double* dst = col.data() + cidx * K;
                int k = 0;
                for (int c = 0; c < d.C; ++c) {
                    const double* xc = xb + static_cast<size_t>(c) * d.H * d.W;
                    for (int ky = 0; ky < d.kh; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        for (int kx = 0; kx < d.kw; ++kx, ++k) {
                            const int ix = ox * stride - pad + kx;
                            dst[k] = (iy >= 0 && iy < d.H && ix >= 0 && ix < d.W)
                                         ? xc[static_cast<size_t>(iy) * d.W + ix]
                                         : 0.0;
                        }
                    }
                }
            }
        }
    }
    return col;
}

void col2im_add(const EMat& dcol, Tensor& dx, const ConvDims& d, int stride, int pad) {
    const int K = d.C * d.kh * d.kw;
    for (int b = 0; b < d.B; ++b) {
        double* xb = dx.data() + static_cast<size_t>(b) * d.C * d.H * d.W;
        long colbase = static_cast<long>(b) * d.Ho * d.Wo;
        for (int oy = 0; oy < d.Ho; ++oy) {
            for (int ox = 0; ox < d.Wo; ++ox) {
                const long cidx = colbase + static_cast<long>(oy) * d.Wo + ox;
                const double* src = dcol.data() + cidx * K;
                int k = 0;
                for (int c = 0; c < d.C; ++c) {
                    double* xc = xb + static_cast<size_t>(c) * d.H * d.W;
                    for (int ky = 0; ky < d.kh; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        for (int kx = 0; kx < d.kw; ++kx, ++k) {
                            const int ix = ox * stride - pad + kx;
                            if (iy >= 0 && iy < d.H && ix >= 0 && ix < d.W)
                                xc[static_cast<size_t>(iy) * d.W + ix] += src[k];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    if (x->value.ndim() != 4 || w->value.ndim() != 4)
        throw ShapeError("conv2d: expected 4-d input and weight");
    if (x->value.dim(1) != w->value.dim(1))
        throw ShapeError("conv2d: channel mismatch " + x->value.shape_str() + " vs " + w->value.shape_str());
    const ConvDims d = conv_dims(x->value, w->value, stride, pad);
    if (b->value.numel() != d.F) throw ShapeError("conv2d: bias size mismatch");
    const int K = d.C * d.kh * d.kw;
    const long N = static_cast<long>(d.B) * d.Ho * d.Wo;

    auto col = std::make_shared<EMat>(im2col(x->value, d, stride, pad));
    EMat out_mat(d.F, N);
    out_mat.noalias() = ECMap(w->value.data(), d.F, K) * (*col);

    Tensor out({d.B, d.F, d.Ho, d.Wo});
    const long hw = static_cast<long>(d.Ho) * d.Wo;
    for (int bi = 0; bi < d.B; ++bi)
        for (int f = 0; f < d.F; ++f) {
            double* dst = out.data() + (static_cast<size_t>(bi) * d.F + f) * hw;
            const double bias = b->value[f];
            for (long p = 0; p < hw; ++p) dst[p] = out_mat(f, bi * hw + p) + bias;
        }

    return make_node(std::move(out), {x, w, b}, [d, stride, pad, K, N, hw, col](Node& self) {
        // regroup dOut into F x N
        EMat gy(d.F, N);
        for (int bi = 0; bi < d.B; ++bi)
            for (int f = 0; f < d.F; ++f) {
                const double* src = self.grad.data() + (static_cast<size_t>(bi) * d.F + f) * hw;
                for (long p = 0; p < hw; ++p) gy(f, bi * hw + p) = src[p];
            }
        auto& x = self.parents[0];
        auto& w = self.parents[1];
        auto& b = self.parents[2];
        if (w->needs_grad)
            EMap(w->ensure_grad().data(), d.F, K).noalias() += gy * col->transpose();
        if (b->needs_grad) {
            Tensor& gb = b->ensure_grad();
            for (int f = 0; f < d.F; ++f) gb[f] += gy.row(f).sum();
        }
        if (x->needs_grad) {
            EMat dcol(K, N);
            dcol.noalias() = ECMap(w->value.data(), d.F, K).transpose() * gy;
            col2im_add(dcol, x->ensure_grad(), d, stride, pad);
        }
    });
}

Var upsample2x(const Var& x) {
    const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    Tensor out({B, C, 2 * H, 2 * W});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < 2 * H; ++y)
                for (int xx = 0; xx < 2 * W; ++xx)
                    out.at(b, c, y, xx) = x->value.at(b, c, y / 2, xx / 2);
    return make_node(std::move(out), {x}, [B, C, H, W](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < 2 * H; ++y)
                    for (int xx = 0; xx < 2 * W; ++xx)
                        g.at(b, c, y / 2, xx / 2) += self.grad.at(b, c, y, xx);
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const int B = a->value.dim(0), C1 = a->value.dim(1), H = a->value.dim(2), W = a->value.dim(3);
    const int C2 = b->value.dim(1);
    if (b->value.dim(0) != B || b->value.dim(2) != H || b->value.dim(3) != W)
        throw ShapeError("concat_channels: spatial mismatch");
    Tensor out({B, C1 + C2, H, W});
    const size_t hw = static_cast<size_t>(H) * W;
    for (int bi = 0; bi < B; ++bi) {
        std::copy_n(a->value.data() + bi * C1 * hw, C1 * hw, out.data() + bi * (C1 + C2) * hw);
        std::copy_n(b->value.data() + bi * C2 * hw, C2 * hw, out.data() + (bi * (C1 + C2) + C1) * hw);
    }
    return make_node(std::move(out), {a, b}, [B, C1, C2, hw](Node& self) {
        auto& a = self.parents[0];
        auto& b = self.parents[1];
        for (int bi = 0; bi < B; ++bi) {
            if (a->needs_grad) {
                double* g = a->ensure_grad().data() + bi * C1 * hw;
                const double* s = self.grad.data() + bi * (C1 + C2) * hw;
                for (size_t i = 0; i < C1 * hw; ++i) g[i] += s[i];
            }
            if (b->needs_grad) {
                double* g = b->ensure_grad().data() + bi * C2 * hw;
                const double* s = self.grad.data() + (bi * (C1 + C2) + C1) * hw;
                for (size_t i = 0; i < C2 * hw; ++i) g[i] += s[i];
            }
        }
    });
}

Var batch_slice(const Var& x, int b) {
    const int C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    const size_t chw = static_cast<size_t>(C) * H * W;
    Tensor out({C, H, W});
    std::copy_n(x->value.data() + b * chw, chw, out.data());
    return make_node(std::move(out), {x}, [b, chw](Node& self) {
        double* g = self.parents[0]->ensure_grad().data() + b * chw;
        const double* s = self.grad.data();
        for (size_t i = 0; i < chw; ++i) g[i] += s[i];
    });
}

Var grid_rows(const Var& x) {
    const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
    Tensor out({H * W, C});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) out.at(y * W + xx, c) = x->value.at(c, y, xx);
    return make_node(std::move(out), {x}, [C, H, W](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) g.at(c, y, xx) += self.grad.at(y * W + xx, c);
    });
}

Var add_batch_dim(const Var& x) {
    const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
    Tensor out({1, C, H, W});
    std::copy_n(x->value.data(), x->value.numel(), out.data());
    return make_node(std::move(out), {x}, [](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    });
}

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                Tensor& running_var, bool training, double momentum, double eps) {
    const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    if (gamma->value.numel() != C || beta->value.numel() != C)
        throw ShapeError("batchnorm2d: affine size mismatch");
    const long N = static_cast<long>(B) * H * W;
    const size_t hw = static_cast<size_t>(H) * W;

    Tensor mean({C}), var({C});
    if (training) {
        for (int c = 0; c < C; ++c) {
            double s = 0;
            for (int b = 0; b < B; ++b) {
                const double* p = x->value.data() + (static_cast<size_t>(b) * C + c) * hw;
                for (size_t i = 0; i < hw; ++i) s += p[i];
            }
            mean[c] = s / N;
            double v = 0;
            for (int b = 0; b < B; ++b) {
                const double* p = x->value.data() + (static_cast<size_t>(b) * C + c) * hw;
                for (size_t i = 0; i < hw; ++i) {
                    const double d = p[i] - mean[c];
                    v += d * d;
                }
            }
            var[c] = v / N;  // biased, used for normalization
        }
        // torch-style running update with the unbiased variance
        const double unbias = N > 1 ? static_cast<double>(N) / (N - 1) : 1.0;
        for (int c = 0; c < C; ++c) {
            running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c];
            running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var[c] * unbias;
        }
    } else {
        mean = running_mean;
        var = running_var;
    }

    Tensor out({B, C, H, W});
    Tensor inv_std({C});
    for (int c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* p = x->value.data() + (static_cast<size_t>(b) * C + c) * hw;
            double* q = out.data() + (static_cast<size_t>(b) * C + c) * hw;
            const double g = gamma->value[c], be = beta->value[c], m = mean[c], is = inv_std[c];
            for (size_t i = 0; i < hw; ++i) q[i] = g * (p[i] - m) * is + be;
        }

    return make_node(std::move(out), {x, gamma, beta},
                     [B, C, H, W, N, hw, mean, inv_std, training](Node& self) {
        auto& x = self.parents[0];
        auto& gamma = self.parents[1];
        auto& beta = self.parents[2];
        for (int c = 0; c < C; ++c) {
            const double m = mean[c], is = inv_std[c], g = gamma->value[c];
            double sum_dy = 0, sum_dy_xhat = 0;
            for (int b = 0; b < B; ++b) {
                const double* xp = x->value.data() + (static_cast<size_t>(b) * C + c) * hw;
                const double* dy = self.grad.data() + (static_cast<size_t>(b) * C + c) * hw;
                for (size_t i = 0; i < hw; ++i) {
                    sum_dy += dy[i];
                    sum_dy_xhat += dy[i] * (xp[i] - m) * is;
                }
            }
            if (gamma->needs_grad) gamma->ensure_grad()[c] += sum_dy_xhat;
            if (beta->needs_grad) beta->ensure_grad()[c] += sum_dy;
            if (x->needs_grad) {
                Tensor& gx = x->ensure_grad();
                for (int b = 0; b < B; ++b) {
                    const double* xp = x->value.data() + (static_cast<size_t>(b) * C + c) * hw;
                    const double* dy = self.grad.data() + (static_cast<size_t>(b) * C + c) * hw;
                    double* gp = gx.data() + (static_cast<size_t>(b) * C + c) * hw;
                    if (training) {
                        for (size_t i = 0; i < hw; ++i) {
                            const double xhat = (xp[i] - m) * is;
                            gp[i] += g * is * (dy[i] - sum_dy / N - xhat * sum_dy_xhat / N);
                        }
                    } else {
                        for (size_t i = 0; i < hw; ++i) gp[i] += g * is * dy[i];
                    }
                }
            }
        }
    });
}

// ---------------- embedding ----------------

Var embedding_rows(const Var& table, const std::vector<int>& ids) {
    const int V = table->value.dim(0), E = table->value.dim(1);
    const int n = static_cast<int>(ids.size());
    Tensor out({n, E});
    for (int i = 0; i < n; ++i) {
        if (ids[i] < 0 || ids[i] >= V) throw ShapeError("embedding_rows: id out of range");
        for (int j = 0; j < E; ++j) out.at(i, j) = table->value.at(ids[i], j);
    }
    return make_node(std::move(out), {table}, [ids, E](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (size_t i = 0; i < ids.size(); ++i)
            for (int j = 0; j < E; ++j) g.at(ids[i], j) += self.grad.at(static_cast<int>(i), j);
    });
}

// ---------------- losses ----------------

Var softmax_xent(const Var& logits, int target) {
    const std::int64_t m = logits->value.numel();
    if (target < 0 || target >= m) throw std::out_of_range("softmax_xent: target index out of range");
    double mx = logits->value[0];
    for (std::int64_t i = 1; i < m; ++i) mx = std::max(mx, logits->value[i]);
    double z = 0;
    for (std::int64_t i = 0; i < m; ++i) z += std::exp(logits->value[i] - mx);
    const double logz = std::log(z) + mx;
    Tensor out = Tensor::scalar(logz - logits->value[target]);
    return make_node(std::move(out), {logits}, [target, m, logz](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        const double gy = self.grad[0];
        const Tensor& lv = self.parents[0]->value;
        for (std::int64_t i = 0; i < m; ++i) {
            const double p = std::exp(lv[i] - logz);
            g[i] += gy * (p - (i == target ? 1.0 : 0.0));
        }
    });
}

Var bce_logits_mean(const Var& logits, const Tensor& targets) {
    const std::int64_t n = logits->value.numel();
    if (targets.numel() != n) throw ShapeError("bce_logits_mean: target size mismatch");
    double acc = 0;
    for (std::int64_t i = 0; i < n; ++i)
        acc += softplus(logits->value[i]) - targets[i] * logits->value[i];
    Tensor out = Tensor::scalar(acc / n);
    return make_node(std::move(out), {logits}, [targets, n](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        const double gy = self.grad[0] / n;
        for (std::int64_t i = 0; i < n; ++i) {
            const double s = 1.0 / (1.0 + std::exp(-self.parents[0]->value[i]));
            g[i] += gy * (s - targets[i]);
        }
    });
}

Var box_reg_loss(const Var& pred4, const Tensor& target4) {
    if (pred4->value.numel() != 4 || target4.numel() != 4)
        throw ShapeError("box_reg_loss: expected 4-vectors");
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    const double sx = sig(pred4->value[0]), sy = sig(pred4->value[1]);
    const double tx = sig(target4[0]), ty = sig(target4[1]);
    const double dw = pred4->value[2] - target4[2], dh = pred4->value[3] - target4[3];
    const double loss = (sx - tx) * (sx - tx) + (sy - ty) * (sy - ty) + dw * dw + dh * dh;
    Tensor out = Tensor::scalar(loss);
    return make_node(std::move(out), {pred4}, [sx, sy, tx, ty, dw, dh](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        const double gy = self.grad[0];
        g[0] += gy * 2.0 * (sx - tx) * sx * (1.0 - sx);
        g[1] += gy * 2.0 * (sy - ty) * sy * (1.0 - sy);
        g[2] += gy * 2.0 * dw;
        g[3] += gy * 2.0 * dh;
    });
}

// ---------------- head helpers ----------------

Var head_logits(const Var& p) {
    const int hw = p->value.dim(0), ch = p->value.dim(1);
    if (ch % 5 != 0) throw ShapeError("head_logits: channels not a multiple of 5");
    const int na = ch / 5;
    Tensor out({hw * na});
    for (int i = 0; i < hw; ++i)
        for (int a = 0; a < na; ++a) out[i * na + a] = p->value.at(i, a * 5 + 4);
    return make_node(std::move(out), {p}, [hw, na](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (int i = 0; i < hw; ++i)
            for (int a = 0; a < na; ++a) g.at(i, a * 5 + 4) += self.grad[i * na + a];
    });
}

Var head_offsets_at(const Var& p, int cell, int anchor) {
    Tensor out({4});
    for (int j = 0; j < 4; ++j) out[j] = p->value.at(cell, anchor * 5 + j);
    return make_node(std::move(out), {p}, [cell, anchor](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (int j = 0; j < 4; ++j) g.at(cell, anchor * 5 + j) += self.grad[j];
    });
}

}  // namespace vg::ad
