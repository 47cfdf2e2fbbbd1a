#pragma once

#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "vg/autodiff.hpp"

namespace vg::nn {

using ad::Var;

// Ordered registry of parameters and persistent buffers (BN running stats).
// Order is fixed by construction, which keeps checkpoints canonical.
class ParamRegistry {
public:
    struct Param {
        std::string name;
        Var var;
        bool backbone = false;   // lower-lr group
        bool trainable = true;
    };
    struct Buffer {
        std::string name;
        Tensor* tensor;  // owned by the layer
    };

    Var add(const std::string& name, Tensor init, bool backbone);
    void add_buffer(const std::string& name, Tensor* t);
    void set_trainable(const std::string& name, bool trainable);

    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    const std::vector<Buffer>& buffers() const { return buffers_; }

    Var find(const std::string& name) const;
    std::int64_t trainable_count() const;
    void zero_grads();

private:
    std::vector<Param> params_;
    std::vector<Buffer> buffers_;
};

// Seeded weight initialization helpers.
class Init {
public:
    explicit Init(std::uint64_t seed) : rng_(seed) {}
    std::mt19937_64& rng() { return rng_; }

    Tensor he_normal(std::vector<int> shape, int fan_in);
    Tensor uniform(std::vector<int> shape, double lo, double hi);
    Tensor normal(std::vector<int> shape, double stddev);

private:
    std::mt19937_64 rng_;
};

struct Conv2d {
    Var w, b;
    int stride = 1, pad = 0;

    Conv2d() = default;
    Conv2d(ParamRegistry& reg, Init& init, const std::string& name, int in_ch, int out_ch,
           int ksize, int stride, int pad, bool backbone);
    Var forward(const Var& x) const { return ad::conv2d(x, w, b, stride, pad); }
};

struct BatchNorm2d {
    Var gamma, beta;
    Tensor running_mean, running_var;
    double momentum = 0.1, eps = 1e-5;

    BatchNorm2d() = default;
    BatchNorm2d(ParamRegistry& reg, const std::string& name, int channels, bool backbone);
    Var forward(const Var& x, bool training) {
        return ad::batchnorm2d(x, gamma, beta, running_mean, running_var, training, momentum, eps);
    }
};

struct Linear {
    Var w, b;

    Linear() = default;
    Linear(ParamRegistry& reg, Init& init, const std::string& name, int in_dim, int out_dim,
           bool backbone);
    Var forward(const Var& x) const { return ad::linear(x, w, b); }
};

struct Embedding {
    Var table;  // [V, E]

    Embedding() = default;
    Embedding(ParamRegistry& reg, Init& init, const std::string& name, int vocab, int dim);
    Var forward(const std::vector<int>& ids) const { return ad::embedding_rows(table, ids); }
};

// Single-layer bidirectional LSTM; forward() returns per-position
// concatenated states [n, 2L].
struct BiLSTM {
    Var wih_f, whh_f, b_f;
    Var wih_b, whh_b, b_b;
    int hidden = 0;

    BiLSTM() = default;
    BiLSTM(ParamRegistry& reg, Init& init, const std::string& name, int input_dim, int hidden_dim);
    Var forward(const Var& emb) const;  // emb [n, E]

private:
    std::vector<Var> run_direction(const Var& emb, const Var& wih, const Var& whh, const Var& b,
                                   bool reverse) const;
};

// Adam with per-group learning rates (backbone vs rest) and a per-parameter
// first/second moment state keyed by name.
class Adam {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void step(ParamRegistry& reg, double lr_main, double lr_backbone);
    long steps_taken() const { return t_; }

    struct Slot {
        Tensor m, v;
    };
    std::unordered_map<std::string, Slot>& slots() { return slots_; }
    void set_steps_taken(long t) { t_ = t; }

private:
    std::unordered_map<std::string, Slot> slots_;
    long t_ = 0;
};

// Polynomial (power 1) decay: lr(s) = base * (1 - s/total), reaching 0 at the
// final step.
double poly_lr(double base_lr, long step, long total_steps);

}  // namespace vg::nn
