#include "vg/image_encoder.hpp"

#include <stdexcept>

namespace vg::image {

using ad::Var;

namespace {

constexpr double kLeakySlope = 0.1;

// conv 3x3 (or 1x1) + BN + leaky ReLU
struct ConvBlock {
    nn::Conv2d conv;
    nn::BatchNorm2d bn;

    ConvBlock() = default;
    ConvBlock(nn::ParamRegistry& reg, nn::Init& init, const std::string& name, int in_ch,
              int out_ch, int ksize, int stride)
        : conv(reg, init, name + ".conv", in_ch, out_ch, ksize, stride, ksize / 2, true),
          bn(reg, name + ".bn", out_ch, true) {}

    Var forward(const Var& x, bool training) {
        return ad::leaky_relu(bn.forward(conv.forward(x), training), kLeakySlope);
    }
};

// Light top-down merge shared by both presets: upsample the coarser map,
// concat, 1x1 to the lateral width.
struct TopDown {
    ConvBlock reduce;

    TopDown() = default;
    TopDown(nn::ParamRegistry& reg, nn::Init& init, const std::string& name, int top_ch,
            int lateral_ch)
        : reduce(reg, init, name, top_ch + lateral_ch, lateral_ch, 1, 1) {}

    Var forward(const Var& top, const Var& lateral, bool training) {
        return reduce.forward(ad::concat_channels(lateral, ad::upsample2x(top)), training);
    }
};

class TinyBackbone : public Backbone {
public:
    TinyBackbone(nn::ParamRegistry& reg, nn::Init& init) {
        stem_ = ConvBlock(reg, init, "backbone.stem", 3, 16, 3, 2);      // /2
        d1_ = ConvBlock(reg, init, "backbone.d1", 16, 32, 3, 2);         // /4
        d2_ = ConvBlock(reg, init, "backbone.d2", 32, 64, 3, 2);         // /8
        r2_ = ConvBlock(reg, init, "backbone.r2", 64, 64, 3, 1);
        d3_ = ConvBlock(reg, init, "backbone.d3", 64, 96, 3, 2);         // /16
        r3_ = ConvBlock(reg, init, "backbone.r3", 96, 96, 3, 1);
        d4_ = ConvBlock(reg, init, "backbone.d4", 96, 128, 3, 2);        // /32
        r4_ = ConvBlock(reg, init, "backbone.r4", 128, 128, 3, 1);
        td16_ = TopDown(reg, init, "backbone.td16", 128, 96);
        td8_ = TopDown(reg, init, "backbone.td8", 96, 64);
    }

    RawFeaturePyramid forward(const Var& images, bool training) override {
        Var x = stem_.forward(images, training);
        x = d1_.forward(x, training);
        Var c8 = r2_.forward(d2_.forward(x, training), training);
        Var c16 = r3_.forward(d3_.forward(c8, training), training);
        Var c32 = r4_.forward(d4_.forward(c16, training), training);
        Var p16 = td16_.forward(c32, c16, training);
        Var p8 = td8_.forward(p16, c8, training);
        return {{c32, p16, p8}};
    }

    std::array<int, 3> out_channels() const override { return {128, 96, 64}; }

private:
    ConvBlock stem_, d1_, d2_, r2_, d3_, r3_, d4_, r4_;
    TopDown td16_, td8_;
};

// Residual pair: 1x1 to half width, 3x3 back, plus skip.
struct DarkResidual {
    ConvBlock squeeze, expand;

    DarkResidual() = default;
    DarkResidual(nn::ParamRegistry& reg, nn::Init& init, const std::string& name, int ch)
        : squeeze(reg, init, name + ".squeeze", ch, ch / 2, 1, 1),
          expand(reg, init, name + ".expand", ch / 2, ch, 3, 1) {}

    Var forward(const Var& x, bool training) {
        return ad::add(x, expand.forward(squeeze.forward(x, training), training));
    }
};

class Darknet53Backbone : public Backbone {
public:
    Darknet53Backbone(nn::ParamRegistry& reg, nn::Init& init, double width_mult) {
        auto ch = [width_mult](int base) { return std::max(2, static_cast<int>(base * width_mult)); };
        const int c0 = ch(32), c1 = ch(64), c2 = ch(128), c3 = ch(256), c4 = ch(512), c5 = ch(1024);
        channels_ = {c5, c4, c3};
        stem_ = ConvBlock(reg, init, "backbone.stem", 3, c0, 3, 1);
        stages_.emplace_back(reg, init, "backbone.s1", c0, c1, 1);
        stages_.emplace_back(reg, init, "backbone.s2", c1, c2, 2);
        stages_.emplace_back(reg, init, "backbone.s3", c2, c3, 8);
        stages_.emplace_back(reg, init, "backbone.s4", c3, c4, 8);
        stages_.emplace_back(reg, init, "backbone.s5", c4, c5, 4);
        td16_ = TopDown(reg, init, "backbone.td16", c5, c4);
        td8_ = TopDown(reg, init, "backbone.td8", c4, c3);
    }

    RawFeaturePyramid forward(const Var& images, bool training) override {
        Var x = stem_.forward(images, training);
        Var c8, c16, c32;
        for (size_t i = 0; i < stages_.size(); ++i) {
            x = stages_[i].forward(x, training);
            if (i == 2) c8 = x;
            if (i == 3) c16 = x;
            if (i == 4) c32 = x;
        }
        Var p16 = td16_.forward(c32, c16, training);
        Var p8 = td8_.forward(p16, c8, training);
        return {{c32, p16, p8}};
    }

    std::array<int, 3> out_channels() const override { return channels_; }

private:
    struct Stage {
        ConvBlock down;
        std::vector<DarkResidual> blocks;

        Stage(nn::ParamRegistry& reg, nn::Init& init, const std::string& name, int in_ch,
              int out_ch, int n_blocks)
            : down(reg, init, name + ".down", in_ch, out_ch, 3, 2) {
            for (int i = 0; i < n_blocks; ++i)
                blocks.emplace_back(reg, init, name + ".res" + std::to_string(i), out_ch);
        }
        Var forward(const Var& x, bool training) {
            Var y = down.forward(x, training);
            for (auto& b : blocks) y = b.forward(y, training);
            return y;
        }
    };

    ConvBlock stem_;
    std::vector<Stage> stages_;
    TopDown td16_, td8_;
    std::array<int, 3> channels_{};
};

}  // namespace

std::unique_ptr<Backbone> build_backbone(const BackboneConfig& cfg, nn::ParamRegistry& reg,
                                         nn::Init& init) {
    if (cfg.preset == "tiny") return std::make_unique<TinyBackbone>(reg, init);
    if (cfg.preset == "darknet53")
        return std::make_unique<Darknet53Backbone>(reg, init, cfg.width_mult);
    throw std::invalid_argument("unknown backbone preset: " + cfg.preset);
}

RawFeaturePyramid encode_image(Backbone& bb, const ad::Var& images, const BackboneConfig& cfg,
                               bool training) {
    const Tensor& v = images->value;
    if (v.ndim() != 4 || v.dim(1) != 3 || v.dim(2) != cfg.input_size || v.dim(3) != cfg.input_size)
        throw ShapeError("encode_image: expected [B,3," + std::to_string(cfg.input_size) + "," +
                         std::to_string(cfg.input_size) + "], got " + v.shape_str());
    return bb.forward(images, training);
}

GridProjector::GridProjector(nn::ParamRegistry& reg, nn::Init& init, const std::string& name,
                             int in_ch, int d_model, const GridSpec& spec)
    : conv(reg, init, name + ".conv", in_ch + 8, d_model, 1, 1, 0, false),
      bn(reg, name + ".bn", d_model, false) {
    // [8, H, W] copy of the per-cell coordinate vectors
    const Tensor hw8 = spatial_coord_features(spec);
    coords = Tensor({8, spec.h, spec.w});
    for (int j = 0; j < spec.h; ++j)
        for (int i = 0; i < spec.w; ++i)
            for (int c = 0; c < 8; ++c) coords.at(c, j, i) = hw8.at(j, i, c);
}

ad::Var GridProjector::forward(const ad::Var& raw, bool training) {
    const int B = raw->value.dim(0), H = raw->value.dim(2), W = raw->value.dim(3);
    if (H != coords.dim(1) || W != coords.dim(2))
        throw ShapeError("project_grid: raw grid " + raw->value.shape_str() +
                         " does not match coordinate grid");
    Tensor tiled({B, 8, H, W});
    for (int b = 0; b < B; ++b)
        std::copy_n(coords.data(), coords.numel(), tiled.data() + b * coords.numel());
    Var with_coords = ad::concat_channels(raw, ad::constant(std::move(tiled)));
    return ad::relu(bn.forward(conv.forward(with_coords), training));
}

}  // namespace vg::image
