#include "vg/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace vg::nn {

Var ParamRegistry::add(const std::string& name, Tensor init, bool backbone) {
    for (const auto& p : params_)
        if (p.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
    Var v = ad::parameter(std::move(init), name);
    params_.push_back({name, v, backbone, true});
    return v;
}

void ParamRegistry::add_buffer(const std::string& name, Tensor* t) {
    buffers_.push_back({name, t});
}

void ParamRegistry::set_trainable(const std::string& name, bool trainable) {
    for (auto& p : params_)
        if (p.name == name) {
            p.trainable = trainable;
            return;
        }
    throw std::invalid_argument("unknown parameter: " + name);
}

Var ParamRegistry::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p.var;
    throw std::invalid_argument("unknown parameter: " + name);
}

std::int64_t ParamRegistry::trainable_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_)
        if (p.trainable) n += p.var->value.numel();
    return n;
}

void ParamRegistry::zero_grads() {
    for (auto& p : params_)
        if (p.var->has_grad()) p.var->grad.zero();
}

Tensor Init::he_normal(std::vector<int> shape, int fan_in) {
    return normal(std::move(shape), std::sqrt(2.0 / fan_in));
}

Tensor Init::uniform(std::vector<int> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng_);
    return t;
}

Tensor Init::normal(std::vector<int> shape, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng_);
    return t;
}

Conv2d::Conv2d(ParamRegistry& reg, Init& init, const std::string& name, int in_ch, int out_ch,
               int ksize, int stride_, int pad_, bool backbone)
    : stride(stride_), pad(pad_) {
    const int fan_in = in_ch * ksize * ksize;
    w = reg.add(name + ".w", init.he_normal({out_ch, in_ch, ksize, ksize}, fan_in), backbone);
    b = reg.add(name + ".b", Tensor({out_ch}), backbone);
}

BatchNorm2d::BatchNorm2d(ParamRegistry& reg, const std::string& name, int channels, bool backbone) {
    gamma = reg.add(name + ".gamma", Tensor::full({channels}, 1.0), backbone);
    beta = reg.add(name + ".beta", Tensor({channels}), backbone);
    running_mean = Tensor({channels});
    running_var = Tensor::full({channels}, 1.0);
    reg.add_buffer(name + ".running_mean", &running_mean);
    reg.add_buffer(name + ".running_var", &running_var);
}

Linear::Linear(ParamRegistry& reg, Init& init, const std::string& name, int in_dim, int out_dim,
               bool backbone) {
    const double bound = 1.0 / std::sqrt(in_dim);
    w = reg.add(name + ".w", init.uniform({out_dim, in_dim}, -bound, bound), backbone);
    b = reg.add(name + ".b", Tensor({out_dim}), backbone);
}

Embedding::Embedding(ParamRegistry& reg, Init& init, const std::string& name, int vocab, int dim) {
    table = reg.add(name + ".table", init.normal({vocab, dim}, 0.1), false);
}

BiLSTM::BiLSTM(ParamRegistry& reg, Init& init, const std::string& name, int input_dim,
               int hidden_dim)
    : hidden(hidden_dim) {
    const double bound = 1.0 / std::sqrt(hidden_dim);
    auto gate_bias = [&]() {
        Tensor b({4 * hidden_dim});
        // forget-gate bias starts at 1
        for (int i = hidden_dim; i < 2 * hidden_dim; ++i) b[i] = 1.0;
        return b;
    };
    wih_f = reg.add(name + ".fwd.wih", init.uniform({4 * hidden_dim, input_dim}, -bound, bound), false);
    whh_f = reg.add(name + ".fwd.whh", init.uniform({4 * hidden_dim, hidden_dim}, -bound, bound), false);
    b_f = reg.add(name + ".fwd.b", gate_bias(), false);
    wih_b = reg.add(name + ".bwd.wih", init.uniform({4 * hidden_dim, input_dim}, -bound, bound), false);
    whh_b = reg.add(name + ".bwd.whh", init.uniform({4 * hidden_dim, hidden_dim}, -bound, bound), false);
    b_b = reg.add(name + ".bwd.b", gate_bias(), false);
}

std::vector<Var> BiLSTM::run_direction(const Var& emb, const Var& wih, const Var& whh, const Var& b,
                                       bool reverse) const {
    using namespace ad;
    const int n = emb->value.dim(0);
    const int L = hidden;
    Var h = constant(Tensor({L}));
    Var c = constant(Tensor({L}));
    std::vector<Var> states(static_cast<size_t>(n));
    for (int step = 0; step < n; ++step) {
        const int t = reverse ? n - 1 - step : step;
        Var x = take_row(emb, t);
        Var z = add(add(matvec(wih, x), matvec(whh, h)), b);
        Var gi = sigmoid(segment(z, 0, L));
        Var gf = sigmoid(segment(z, L, L));
        Var gg = tanh_op(segment(z, 2 * L, L));
        Var go = sigmoid(segment(z, 3 * L, L));
        c = add(mul(gf, c), mul(gi, gg));
        h = mul(go, tanh_op(c));
        states[static_cast<size_t>(t)] = h;
    }
    return states;
}

Var BiLSTM::forward(const Var& emb) const {
    using namespace ad;
    const int n = emb->value.dim(0);
    auto fwd = run_direction(emb, wih_f, whh_f, b_f, false);
    auto bwd = run_direction(emb, wih_b, whh_b, b_b, true);
    std::vector<Var> rows(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) rows[static_cast<size_t>(i)] = concat_vecs({fwd[i], bwd[i]});
    return stack_rows(rows);
}

void Adam::step(ParamRegistry& reg, double lr_main, double lr_backbone) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2, t_);
    for (auto& p : reg.params()) {
        if (!p.trainable || !p.var->has_grad()) continue;
        auto& slot = slots_[p.name];
        if (slot.m.empty()) {
            slot.m = Tensor(p.var->value.shape());
            slot.v = Tensor(p.var->value.shape());
        }
        const double lr = p.backbone ? lr_backbone : lr_main;
        Tensor& theta = p.var->value;
        const Tensor& g = p.var->grad;
        for (std::int64_t i = 0; i < theta.numel(); ++i) {
            slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g[i];
            slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g[i] * g[i];
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

double poly_lr(double base_lr, long step, long total_steps) {
    if (total_steps <= 0) return base_lr;
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    return base_lr * (1.0 - frac);
}

}  // namespace vg::nn
