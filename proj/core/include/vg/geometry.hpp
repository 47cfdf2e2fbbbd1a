#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "vg/tensor.hpp"

namespace vg {

// Axis-aligned box, corner+size in pixels, origin top-left.
struct Box {
    double x = 0, y = 0, w = 0, h = 0;

    double area() const { return w * h; }
    double cx() const { return x + 0.5 * w; }
    double cy() const { return y + 0.5 * h; }
    static Box from_center(double cx, double cy, double w, double h) {
        return {cx - 0.5 * w, cy - 0.5 * h, w, h};
    }
    Box clipped(double image_w, double image_h) const;
};

// Width/height prior replicated at every grid cell.
struct AnchorBox {
    double pw = 0, ph = 0;
};

// One feature-map resolution: H x W cells at a fixed pixel stride.
struct GridSpec {
    int h = 0, w = 0;
    int stride = 0;
    int resolution_index = 0;  // 0,1,2 <-> strides 32,16,8

    int cells() const { return h * w; }
    int input_w() const { return w * stride; }
    int input_h() const { return h * stride; }
};

// 0/1 grid; the 1-region is a rectangle of cells (possibly empty).
struct BinaryMask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> values;  // row-major

    std::uint8_t at(int r, int c) const { return values[static_cast<size_t>(r) * w + c]; }
    std::uint8_t& at(int r, int c) { return values[static_cast<size_t>(r) * w + c]; }
    Tensor to_tensor() const;  // flat [h*w] of 0.0/1.0
};

inline constexpr std::array<int, 3> kStrides = {32, 16, 8};

// The nine detection priors, smallest to largest (pixel units at the
// network input scale).
inline constexpr std::array<AnchorBox, 9> kAnchors = {{{10, 13},
                                                       {16, 30},
                                                       {33, 23},
                                                       {30, 61},
                                                       {62, 45},
                                                       {59, 119},
                                                       {116, 90},
                                                       {156, 198},
                                                       {373, 326}}};

// Anchors partitioned per resolution: largest three on the stride-32 grid,
// middle three on stride-16, smallest three on stride-8.
std::array<std::array<AnchorBox, 3>, 3> anchors_by_resolution();

// Grid specs for a square input (must be divisible by 32).
std::array<GridSpec, 3> grid_specs(int input_size);

// Flat anchor indexing: resolution-major, then row-major cell, anchor-minor.
struct AnchorRef {
    int k = 0;  // resolution
    int r = 0, c = 0;
    int a = 0;  // anchor within cell
};

class AnchorLayout {
public:
    explicit AnchorLayout(int input_size);

    const std::array<GridSpec, 3>& specs() const { return specs_; }
    const std::array<std::array<AnchorBox, 3>, 3>& anchors() const { return anchors_; }
    int total() const { return total_; }  // m = sum_k 3*H_k*W_k

    int flat_index(const AnchorRef& ref) const;
    AnchorRef ref(int flat) const;
    // Anchor placement as a box centered on its cell center.
    Box placement(const AnchorRef& ref) const;

private:
    std::array<GridSpec, 3> specs_;
    std::array<std::array<AnchorBox, 3>, 3> anchors_;
    std::array<int, 3> offsets_{};
    int total_ = 0;
};

// Intersection over union; degenerate unions give 0.
double iou(const Box& a, const Box& b);

// Per-cell 8-vector of normalized cell coordinates:
// (i/W, j/H, (i+.5)/W, (j+.5)/H, (i+1)/W, (j+1)/H, 1/W, 1/H), i = column,
// j = row. Returned as [H, W, 8].
Tensor spatial_coord_features(const GridSpec& spec);

// Cell is 1 iff its center point lies strictly inside gt.
BinaryMask rasterize_mask(const Box& gt, const GridSpec& spec);

// Global index of the anchor placement with the highest IoU against gt;
// ties broken by the lowest flat index. gt must have positive area.
int assign_best_anchor(const Box& gt, const AnchorLayout& layout);

// YOLO-style decode: center = (sigmoid(tx)+c)*stride, (sigmoid(ty)+r)*stride;
// size = pw*exp(tw), ph*exp(th). Result clipped to the input image bounds.
Box decode_prediction(const std::array<double, 4>& offsets, const AnchorBox& anchor, int row,
                      int col, const GridSpec& spec);

}  // namespace vg
