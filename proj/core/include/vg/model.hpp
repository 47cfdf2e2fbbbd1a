#pragma once

#include <memory>
#include <vector>

#include "vg/fusion_grounding.hpp"
#include "vg/image_encoder.hpp"
#include "vg/text_encoder.hpp"
#include "vg/vt_attention.hpp"

namespace vg {

struct ModelConfig {
    image::BackboneConfig backbone;
    int d_model = 256;      // D
    int d_fused = 256;      // D'
    int lstm_hidden = 128;  // L
    int embed_dim = 300;    // E (overridden by GloVe when supplied)
    int max_query_len = 40;
    std::uint64_t seed = 1;
};

// The assembled grounding network: backbone + per-resolution projection,
// text encoder, visual-text attention, fusion and prediction heads.
class GroundingModel {
public:
    GroundingModel(const ModelConfig& cfg, const text::Vocabulary& vocab);

    struct SampleForward {
        std::array<attn::CrossModalState, 3> xmodal;
        std::array<ad::Var, 3> fused;     // F_k rows [HW, D']
        std::array<ad::Var, 3> head_out;  // P_k [HW, 15]
        ad::Var logits;                   // [m]
    };
    struct BatchForward {
        image::RawFeaturePyramid raw;
        std::array<ad::Var, 3> projected;  // [B, D, Hk, Wk]
        std::vector<SampleForward> samples;
    };

    // images: [B,3,S,S] normalized to [0,1]; token_ids: per-sample id lists.
    BatchForward forward(const Tensor& images, const std::vector<std::vector<int>>& token_ids,
                         bool training);

    fusion::PredictionSet predictions(const SampleForward& s) const;

    const ModelConfig& config() const { return cfg_; }
    const AnchorLayout& layout() const { return layout_; }
    nn::ParamRegistry& registry() { return registry_; }
    const nn::ParamRegistry& registry() const { return registry_; }
    text::TextEncoder& text_encoder() { return text_; }

private:
    ModelConfig cfg_;
    nn::ParamRegistry registry_;
    AnchorLayout layout_;
    std::unique_ptr<image::Backbone> backbone_;
    std::array<image::GridProjector, 3> projectors_;
    text::TextEncoder text_;
    std::array<nn::Linear, 3> fuse_;
    std::array<nn::Linear, 3> head_;
};

}  // namespace vg
