#pragma once

#include <array>
#include <memory>
#include <string>

#include "vg/geometry.hpp"
#include "vg/nn.hpp"

namespace vg::image {

// Backbone preset: "tiny" is a small strided conv pyramid for CPU-scale
// work; "darknet53" reproduces the 53-layer residual topology (trained from
// scratch). Both emit three scales at strides 32/16/8.
struct BackboneConfig {
    std::string preset = "tiny";
    int input_size = 416;
    double width_mult = 1.0;  // darknet53 channel scaling (1.0 = paper widths)
};

struct RawFeaturePyramid {
    std::array<ad::Var, 3> grids;  // k=0 stride 32, k=1 stride 16, k=2 stride 8; [B,Ck,Hk,Wk]
};

class Backbone {
public:
    virtual ~Backbone() = default;
    virtual RawFeaturePyramid forward(const ad::Var& images, bool training) = 0;
    virtual std::array<int, 3> out_channels() const = 0;
};

// Builds the preset topology and registers its parameters under the
// "backbone." prefix (these form the lower-lr group).
std::unique_ptr<Backbone> build_backbone(const BackboneConfig& cfg, nn::ParamRegistry& reg,
                                         nn::Init& init);

// Shape-checked entry point: image batch must match cfg.input_size.
RawFeaturePyramid encode_image(Backbone& bb, const ad::Var& images, const BackboneConfig& cfg,
                               bool training);

// 1x1 conv + batch norm + ReLU mapping (C_k + 8) channels to D. The spatial
// coordinate features are appended to the raw grid before projection.
struct GridProjector {
    nn::Conv2d conv;
    nn::BatchNorm2d bn;
    Tensor coords;  // [8, H, W], fixed per grid spec

    GridProjector() = default;
    GridProjector(nn::ParamRegistry& reg, nn::Init& init, const std::string& name, int in_ch,
                  int d_model, const GridSpec& spec);
    // raw: [B, C_k, H, W] -> [B, D, H, W], rectified.
    ad::Var forward(const ad::Var& raw, bool training);
};

}  // namespace vg::image
