#include <doctest.h>

#include <random>

#include "vg/geometry.hpp"
#include "vg/losses.hpp"
#include "vg/verification.hpp"

using namespace vg;

namespace {

// Area-count oracle for integer boxes: count unit squares in the
// intersection and union.
double iou_unit_square_oracle(const Box& a, const Box& b) {
    const int lo_x = static_cast<int>(std::min(a.x, b.x)) - 1;
    const int hi_x = static_cast<int>(std::max(a.x + a.w, b.x + b.w)) + 1;
    const int lo_y = static_cast<int>(std::min(a.y, b.y)) - 1;
    const int hi_y = static_cast<int>(std::max(a.y + a.h, b.y + b.h)) + 1;
    auto covers = [](const Box& box, int x, int y) {
        return x >= box.x && x + 1 <= box.x + box.w && y >= box.y && y + 1 <= box.y + box.h;
    };
    long inter = 0, uni = 0;
    for (int y = lo_y; y < hi_y; ++y)
        for (int x = lo_x; x < hi_x; ++x) {
            const bool in_a = covers(a, x, y), in_b = covers(b, x, y);
            if (in_a && in_b) ++inter;
            if (in_a || in_b) ++uni;
        }
    return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

Box random_box(std::mt19937_64& rng, double canvas) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double w = 4.0 + u(rng) * (canvas / 2);
    const double h = 4.0 + u(rng) * (canvas / 2);
    const double x = u(rng) * (canvas - w);
    const double y = u(rng) * (canvas - h);
    return {x, y, w, h};
}

}  // namespace

TEST_CASE("iou identity, disjoint and hand values") {
    const Box b{0, 0, 10, 10};
    CHECK(iou(b, b) == doctest::Approx(1.0));
    CHECK(iou({0, 0, 5, 5}, {10, 10, 5, 5}) == 0.0);
    // frozen from the unit-square area-count oracle: inter 1, union 7
    const Box a{0, 0, 2, 2}, c{1, 1, 2, 2};
    CHECK(iou_unit_square_oracle(a, c) == doctest::Approx(1.0 / 7.0));
    CHECK(iou(a, c) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
    CHECK(iou({0, 0, 0, 0}, {0, 0, 0, 0}) == 0.0);
}

TEST_CASE("iou is symmetric and 1 on self") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 200; ++i) {
        const Box a = random_box(rng, 416), b = random_box(rng, 416);
        CHECK(iou(a, b) == doctest::Approx(iou(b, a)).epsilon(1e-12));
        CHECK(iou(a, a) == doctest::Approx(1.0));
        const double v = iou(a, b);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("spatial coordinate features match the closed form") {
    const GridSpec spec{2, 2, 32, 0};
    const Tensor c = spatial_coord_features(spec);
    // cell i=0, j=0
    const double expected[8] = {0, 0, 0.25, 0.25, 0.5, 0.5, 0.5, 0.5};
    for (int k = 0; k < 8; ++k) CHECK(c.at(0, 0, k) == doctest::Approx(expected[k]));

    const GridSpec spec13{13, 13, 32, 0};
    const Tensor f = spatial_coord_features(spec13);
    for (int j = 0; j < 13; ++j)
        for (int i = 0; i < 13; ++i) {
            CHECK(f.at(j, i, 6) == doctest::Approx(1.0 / 13));
            CHECK(f.at(j, i, 7) == doctest::Approx(1.0 / 13));
            for (int k = 0; k < 8; ++k) {
                CHECK(f.at(j, i, k) >= 0.0);
                CHECK(f.at(j, i, k) <= 1.0);
            }
            // center coordinates sit strictly between the edges
            CHECK(f.at(j, i, 2) > f.at(j, i, 0));
            CHECK(f.at(j, i, 2) < f.at(j, i, 4));
            CHECK(f.at(j, i, 3) > f.at(j, i, 1));
            CHECK(f.at(j, i, 3) < f.at(j, i, 5));
        }
    // right edge: (i+1)/W == 1 exactly
    CHECK(f.at(0, 12, 4) == doctest::Approx(1.0));
}

TEST_CASE("rasterize_mask basic cases") {
    const auto specs = grid_specs(416);
    for (const auto& spec : specs) {
        const BinaryMask full = rasterize_mask({0, 0, 416, 416}, spec);
        for (auto v : full.values) CHECK(v == 1);
        const BinaryMask zero = rasterize_mask({0, 0, 0, 0}, spec);
        for (auto v : zero.values) CHECK(v == 0);
    }
    // 208x208 box on the 13x13 grid: centers 16,48,...,176 < 208
    const BinaryMask m = rasterize_mask({0, 0, 208, 208}, specs[0]);
    for (int r = 0; r < 13; ++r)
        for (int c = 0; c < 13; ++c) CHECK(static_cast<int>(m.at(r, c)) == ((r <= 5 && c <= 5) ? 1 : 0));
}

TEST_CASE("rasterize_mask matches the pixel-center oracle") {
    std::mt19937_64 rng(11);
    const auto specs = grid_specs(416);
    for (int trial = 0; trial < 100; ++trial) {
        const Box gt = random_box(rng, 416);
        for (const auto& spec : specs) {
            // full-resolution indicator sampled at integer cell-center points
            const BinaryMask mask = rasterize_mask(gt, spec);
            for (int r = 0; r < spec.h; ++r)
                for (int c = 0; c < spec.w; ++c) {
                    const int px = c * spec.stride + spec.stride / 2;
                    const int py = r * spec.stride + spec.stride / 2;
                    const bool inside =
                        px > gt.x && px < gt.x + gt.w && py > gt.y && py < gt.y + gt.h;
                    CHECK(static_cast<int>(mask.at(r, c)) == (inside ? 1 : 0));
                }
        }
    }
}

TEST_CASE("anchor layout constants and bijection") {
    const AnchorLayout layout(416);
    CHECK(layout.total() == 10647);  // 3*(13^2 + 26^2 + 52^2)
    CHECK(layout.specs()[0].stride == 32);
    CHECK(layout.specs()[1].stride == 16);
    CHECK(layout.specs()[2].stride == 8);
    // largest anchors on the coarsest grid
    CHECK(layout.anchors()[0][0].pw == 116);
    CHECK(layout.anchors()[0][2].ph == 326);
    CHECK(layout.anchors()[2][0].pw == 10);
    int expected = 0;
    for (int k = 0; k < 3; ++k)
        for (int r = 0; r < layout.specs()[k].h; ++r)
            for (int c = 0; c < layout.specs()[k].w; ++c)
                for (int a = 0; a < 3; ++a) {
                    const AnchorRef ref{k, r, c, a};
                    const int flat = layout.flat_index(ref);
                    CHECK(flat == expected);
                    const AnchorRef back = layout.ref(flat);
                    CHECK(back.k == k);
                    CHECK(back.r == r);
                    CHECK(back.c == c);
                    CHECK(back.a == a);
                    ++expected;
                }
    CHECK(expected == 10647);
}

TEST_CASE("assign_best_anchor picks the exact-match placement") {
    const AnchorLayout layout(416);
    // anchor (116,90) is anchor 0 on the stride-32 grid; center it on cell (4,6)
    const Box gt = Box::from_center((6 + 0.5) * 32, (4 + 0.5) * 32, 116, 90);
    const int idx = assign_best_anchor(gt, layout);
    CHECK(idx == layout.flat_index({0, 4, 6, 0}));
    CHECK(iou(gt, layout.placement(layout.ref(idx))) == doctest::Approx(1.0));
}

TEST_CASE("assign_best_anchor breaks ties by the lowest flat index") {
    const AnchorLayout layout(416);
    // centered exactly between the centers of cells (4,6) and (4,7): both
    // placements of every anchor have identical IoU
    const Box gt = Box::from_center(7.0 * 32, (4 + 0.5) * 32, 116, 90);
    const int idx = assign_best_anchor(gt, layout);
    const auto [oracle_idx, oracle_iou] = verify::exhaustive_anchor_scan(gt, layout);
    CHECK(idx == oracle_idx);
    CHECK(layout.ref(idx).c == 6);  // the left cell has the lower flat index
}

TEST_CASE("assign_best_anchor equals the exhaustive scan on random boxes") {
    const AnchorLayout layout(416);
    std::mt19937_64 rng(23);
    for (int i = 0; i < 50; ++i) {
        const Box gt = random_box(rng, 416);
        const auto [oracle_idx, oracle_iou] = verify::exhaustive_anchor_scan(gt, layout);
        CHECK(assign_best_anchor(gt, layout) == oracle_idx);
        CHECK(oracle_iou > 0.0);
    }
}

TEST_CASE("decode_prediction closed-form cases") {
    const GridSpec spec{13, 13, 32, 0};
    const Box b = decode_prediction({0, 0, 0, 0}, {16, 30}, 0, 0, spec);
    CHECK(b.x == doctest::Approx(8.0));
    CHECK(b.y == doctest::Approx(1.0));
    CHECK(b.w == doctest::Approx(16.0));
    CHECK(b.h == doctest::Approx(30.0));
    const Box wide = decode_prediction({0, 0, std::log(2.0), 0}, {16, 30}, 0, 0, spec);
    CHECK(wide.w == doctest::Approx(32.0));
    CHECK(wide.h == doctest::Approx(30.0));
}

TEST_CASE("decode clips to image bounds") {
    const GridSpec spec{13, 13, 32, 0};
    const Box b = decode_prediction({0, 0, 3.0, 3.0}, {373, 326}, 0, 0, spec);
    CHECK(b.x >= 0.0);
    CHECK(b.y >= 0.0);
    CHECK(b.x + b.w <= 416.0);
    CHECK(b.y + b.h <= 416.0);
}

TEST_CASE("encode/decode round-trips random boxes") {
    // encode's contract: the target cell contains the gt center
    const AnchorLayout layout(416);
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<int> pick3(0, 2);
    for (int i = 0; i < 100; ++i) {
        const Box gt = random_box(rng, 416);
        const int k = pick3(rng);
        const int a = pick3(rng);
        const GridSpec& spec = layout.specs()[k];
        const int col = std::min(spec.w - 1, static_cast<int>(gt.cx() / spec.stride));
        const int row = std::min(spec.h - 1, static_cast<int>(gt.cy() / spec.stride));
        const AnchorBox& anchor = layout.anchors()[k][a];
        const auto off = losses::encode_gt_offsets(gt, anchor, row, col, spec);
        const Box back = decode_prediction(off, anchor, row, col, spec);
        CHECK(std::abs(back.x - gt.x) < 1e-5);
        CHECK(std::abs(back.y - gt.y) < 1e-5);
        CHECK(std::abs(back.w - gt.w) < 1e-5);
        CHECK(std::abs(back.h - gt.h) < 1e-5);
    }
}

TEST_CASE("encode at the assigned anchor decodes to an overlapping box") {
    // IoU plateaus let assign_best_anchor tie-break onto a cell away from
    // the gt center; the sigmoid clamp keeps the decode on the plateau
    const AnchorLayout layout(416);
    std::mt19937_64 rng(33);
    for (int i = 0; i < 50; ++i) {
        const Box gt = random_box(rng, 416);
        const int idx = assign_best_anchor(gt, layout);
        const AnchorRef ref = layout.ref(idx);
        const auto off = losses::encode_gt_offsets(gt, layout.anchors()[ref.k][ref.a], ref.r, ref.c,
                                                   layout.specs()[ref.k]);
        const Box back = decode_prediction(off, layout.anchors()[ref.k][ref.a], ref.r, ref.c,
                                           layout.specs()[ref.k]);
        CHECK(back.w <= gt.w + 1e-5);  // clipping can only shrink
        CHECK(back.h <= gt.h + 1e-5);
        CHECK(iou(back, gt) > 0.0);
    }
}

TEST_CASE("grid specs reject bad input sizes") {
    CHECK_THROWS(grid_specs(415));
    CHECK_THROWS(grid_specs(0));
    const auto specs = grid_specs(256);
    CHECK(specs[0].h == 8);
    CHECK(specs[1].h == 16);
    CHECK(specs[2].h == 32);
}
