#include "vg/model.hpp"

namespace vg {

GroundingModel::GroundingModel(const ModelConfig& cfg, const text::Vocabulary& vocab)
    : cfg_(cfg), layout_(cfg.backbone.input_size) {
    nn::Init init(cfg.seed);
    backbone_ = image::build_backbone(cfg.backbone, registry_, init);
    const auto raw_ch = backbone_->out_channels();
    for (int k = 0; k < 3; ++k)
        projectors_[static_cast<size_t>(k)] =
            image::GridProjector(registry_, init, "project.k" + std::to_string(k), raw_ch[static_cast<size_t>(k)],
                                 cfg.d_model, layout_.specs()[k]);
    text_ = text::TextEncoder(registry_, init, vocab, cfg.lstm_hidden, cfg.d_model);
    for (int k = 0; k < 3; ++k) {
        fuse_[static_cast<size_t>(k)] = nn::Linear(registry_, init, "fuse.k" + std::to_string(k),
                                                   3 * cfg.d_model, cfg.d_fused, false);
        head_[static_cast<size_t>(k)] = nn::Linear(registry_, init, "head.k" + std::to_string(k),
                                                   cfg.d_fused, 15, false);
    }
}

GroundingModel::BatchForward GroundingModel::forward(const Tensor& images,
                                                     const std::vector<std::vector<int>>& token_ids,
                                                     bool training) {
    const int B = images.dim(0);
    if (static_cast<size_t>(B) != token_ids.size())
        throw ShapeError("forward: image batch and query count differ");
    BatchForward out;
    ad::Var input = ad::constant(images);
    out.raw = image::encode_image(*backbone_, input, cfg_.backbone, training);
    for (int k = 0; k < 3; ++k)
        out.projected[static_cast<size_t>(k)] =
            projectors_[static_cast<size_t>(k)].forward(out.raw.grids[static_cast<size_t>(k)], training);

    out.samples.reserve(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) {
        SampleForward s;
        const auto& ids = token_ids[static_cast<size_t>(b)];
        text::QueryEncoding enc = text_.forward(ids);
        const int n = static_cast<int>(ids.size());
        for (int k = 0; k < 3; ++k) {
            ad::Var grid = ad::grid_rows(ad::batch_slice(out.projected[static_cast<size_t>(k)], b));
            s.xmodal[static_cast<size_t>(k)] = attn::cross_modal(grid, enc.qprime, n);
            s.fused[static_cast<size_t>(k)] =
                fusion::fuse(grid, s.xmodal[static_cast<size_t>(k)].text_feat,
                             s.xmodal[static_cast<size_t>(k)].attended, fuse_[static_cast<size_t>(k)]);
            s.head_out[static_cast<size_t>(k)] =
                fusion::head(s.fused[static_cast<size_t>(k)], head_[static_cast<size_t>(k)]);
        }
        s.logits = fusion::gather_logits(s.head_out);
        out.samples.push_back(std::move(s));
    }
    return out;
}

fusion::PredictionSet GroundingModel::predictions(const SampleForward& s) const {
    return fusion::extract_predictions(s.head_out, layout_);
}

}  // namespace vg
