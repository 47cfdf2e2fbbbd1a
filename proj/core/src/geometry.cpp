#include "vg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vg {

Box Box::clipped(double image_w, double image_h) const {
    const double x0 = std::max(0.0, x);
    const double y0 = std::max(0.0, y);
    const double x1 = std::min(image_w, x + w);
    const double y1 = std::min(image_h, y + h);
    return {x0, y0, std::max(0.0, x1 - x0), std::max(0.0, y1 - y0)};
}

Tensor BinaryMask::to_tensor() const {
    Tensor t({h * w});
    for (int i = 0; i < h * w; ++i) t[i] = values[i] ? 1.0 : 0.0;
    return t;
}

std::array<std::array<AnchorBox, 3>, 3> anchors_by_resolution() {
    std::array<std::array<AnchorBox, 3>, 3> out;
    for (int k = 0; k < 3; ++k)
        for (int a = 0; a < 3; ++a) out[k][a] = kAnchors[(2 - k) * 3 + a];
    return out;
}

std::array<GridSpec, 3> grid_specs(int input_size) {
    if (input_size <= 0 || input_size % 32 != 0)
        throw std::invalid_argument("input size must be a positive multiple of 32");
    std::array<GridSpec, 3> specs;
    for (int k = 0; k < 3; ++k) {
        const int stride = kStrides[k];
        specs[k] = GridSpec{input_size / stride, input_size / stride, stride, k};
    }
    return specs;
}

AnchorLayout::AnchorLayout(int input_size)
    : specs_(grid_specs(input_size)), anchors_(anchors_by_resolution()) {
    int off = 0;
    for (int k = 0; k < 3; ++k) {
        offsets_[k] = off;
        off += 3 * specs_[k].cells();
    }
    total_ = off;
}

int AnchorLayout::flat_index(const AnchorRef& ref) const {
    return offsets_[ref.k] + (ref.r * specs_[ref.k].w + ref.c) * 3 + ref.a;
}

AnchorRef AnchorLayout::ref(int flat) const {
    if (flat < 0 || flat >= total_) throw std::out_of_range("anchor flat index out of range");
    int k = 2;
    while (k > 0 && flat < offsets_[k]) --k;
    int rem = flat - offsets_[k];
    AnchorRef r;
    r.k = k;
    r.a = rem % 3;
    const int cell = rem / 3;
    r.c = cell % specs_[k].w;
    r.r = cell / specs_[k].w;
    return r;
}

Box AnchorLayout::placement(const AnchorRef& ref) const {
    const GridSpec& s = specs_[ref.k];
    const AnchorBox& a = anchors_[ref.k][ref.a];
    const double cx = (ref.c + 0.5) * s.stride;
    const double cy = (ref.r + 0.5) * s.stride;
    return Box::from_center(cx, cy, a.pw, a.ph);
}

double iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

Tensor spatial_coord_features(const GridSpec& spec) {
    if (spec.h < 1 || spec.w < 1) throw std::invalid_argument("grid must be at least 1x1");
    Tensor out({spec.h, spec.w, 8});
    const double iw = 1.0 / spec.w, ih = 1.0 / spec.h;
    for (int j = 0; j < spec.h; ++j) {
        for (int i = 0; i < spec.w; ++i) {
            double* v = out.data() + (static_cast<size_t>(j) * spec.w + i) * 8;
            v[0] = i * iw;
            v[1] = j * ih;
            v[2] = (i + 0.5) * iw;
            v[3] = (j + 0.5) * ih;
            v[4] = (i + 1.0) * iw;
            v[5] = (j + 1.0) * ih;
            v[6] = iw;
            v[7] = ih;
        }
    }
    return out;
}

BinaryMask rasterize_mask(const Box& gt, const GridSpec& spec) {
    BinaryMask mask;
    mask.h = spec.h;
    mask.w = spec.w;
    mask.values.assign(static_cast<size_t>(spec.h) * spec.w, 0);
    if (gt.w <= 0 || gt.h <= 0) return mask;  // degenerate annotation -> empty mask
    for (int r = 0; r < spec.h; ++r) {
        const double cy = (r + 0.5) * spec.stride;
        for (int c = 0; c < spec.w; ++c) {
            const double cx = (c + 0.5) * spec.stride;
            const bool inside = cx > gt.x && cx < gt.x + gt.w && cy > gt.y && cy < gt.y + gt.h;
            if (inside) mask.at(r, c) = 1;
        }
    }
    return mask;
}

int assign_best_anchor(const Box& gt, const AnchorLayout& layout) {
    if (gt.area() <= 0) throw std::invalid_argument("assign_best_anchor: gt must have positive area");
    int best = 0;
    double best_iou = -1.0;
    for (int k = 0; k < 3; ++k) {
        const GridSpec& s = layout.specs()[k];
        for (int r = 0; r < s.h; ++r)
            for (int c = 0; c < s.w; ++c)
                for (int a = 0; a < 3; ++a) {
                    const AnchorRef ref{k, r, c, a};
                    const double v = iou(gt, layout.placement(ref));
                    if (v > best_iou) {
                        best_iou = v;
                        best = layout.flat_index(ref);
                    }
                }
    }
    return best;
}

Box decode_prediction(const std::array<double, 4>& offsets, const AnchorBox& anchor, int row,
                      int col, const GridSpec& spec) {
    const double sx = 1.0 / (1.0 + std::exp(-offsets[0]));
    const double sy = 1.0 / (1.0 + std::exp(-offsets[1]));
    const double cx = (sx + col) * spec.stride;
    const double cy = (sy + row) * spec.stride;
    const double w = anchor.pw * std::exp(offsets[2]);
    const double h = anchor.ph * std::exp(offsets[3]);
    return Box::from_center(cx, cy, w, h).clipped(spec.input_w(), spec.input_h());
}

}  // namespace vg
