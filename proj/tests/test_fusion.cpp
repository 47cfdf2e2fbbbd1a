#include <doctest.h>

#include "gradcheck_util.hpp"
#include "vg/fusion_grounding.hpp"

using namespace vg;
using gradcheck::random_tensor;

namespace {

nn::Linear make_linear(nn::ParamRegistry& reg, nn::Init& init, const std::string& name, int in,
                       int out) {
    return nn::Linear(reg, init, name, in, out, false);
}

}  // namespace

TEST_CASE("fuse l2-normalizes each block before projection") {
    std::mt19937_64 rng(1);
    Tensor g = random_tensor({6, 4}, rng);
    Tensor t = random_tensor({6, 4}, rng);
    Tensor v = random_tensor({6, 4}, rng);
    // zero row in V exercises the epsilon guard
    for (int j = 0; j < 4; ++j) v.at(2, j) = 0.0;

    auto gn = ad::l2_normalize_rows(ad::constant(g), fusion::kNormEps);
    auto tn = ad::l2_normalize_rows(ad::constant(t), fusion::kNormEps);
    auto vn = ad::l2_normalize_rows(ad::constant(v), fusion::kNormEps);
    const Tensor block = ad::concat_cols({gn, tn, vn})->value;
    for (int r = 0; r < 6; ++r)
        for (int part = 0; part < 3; ++part) {
            double norm = 0;
            for (int j = 0; j < 4; ++j) norm += block.at(r, part * 4 + j) * block.at(r, part * 4 + j);
            norm = std::sqrt(norm);
            if (r == 2 && part == 2)
                CHECK(norm == 0.0);  // zero vector stays zero
            else
                CHECK(norm == doctest::Approx(1.0).epsilon(1e-9));
        }

    // output width is D' regardless of D
    nn::ParamRegistry reg;
    nn::Init init(3);
    auto proj = make_linear(reg, init, "fuse", 12, 5);
    const Tensor fused = fusion::fuse(ad::constant(g), ad::constant(t), ad::constant(v), proj)->value;
    CHECK(fused.shape() == std::vector<int>{6, 5});
    CHECK(fused.all_finite());
}

TEST_CASE("predict emits m logits at 416 and the softmax is global") {
    const AnchorLayout layout(416);
    nn::ParamRegistry reg;
    nn::Init init(5);
    std::array<nn::Linear, 3> heads = {make_linear(reg, init, "h0", 8, 15),
                                       make_linear(reg, init, "h1", 8, 15),
                                       make_linear(reg, init, "h2", 8, 15)};
    std::array<ad::Var, 3> head_out;
    std::mt19937_64 rng(7);
    for (int k = 0; k < 3; ++k) {
        const int hw = layout.specs()[k].cells();
        head_out[static_cast<size_t>(k)] =
            fusion::head(ad::constant(random_tensor({hw, 8}, rng)), heads[static_cast<size_t>(k)]);
    }
    auto logits = fusion::gather_logits(head_out);
    CHECK(logits->value.numel() == 10647);

    fusion::PredictionSet p = fusion::extract_predictions(head_out, layout);
    CHECK(p.m() == 10647);
    double sum = 0;
    for (int i = 0; i < p.m(); ++i) sum += p.confidence[i];
    CHECK(std::abs(sum - 1.0) < 1e-6);

    // logits gathered resolution-major, cell row-major, anchor-minor
    const Tensor& p0 = head_out[0]->value;
    CHECK(logits->value[0] == p0.at(0, 4));
    CHECK(logits->value[1] == p0.at(0, 9));
    CHECK(logits->value[5] == p0.at(1, 14));
}

TEST_CASE("uniform logit shift leaves confidence unchanged") {
    const AnchorLayout layout(96);
    std::array<ad::Var, 3> a, b;
    std::mt19937_64 rng(11);
    for (int k = 0; k < 3; ++k) {
        Tensor t = random_tensor({layout.specs()[k].cells(), 15}, rng);
        a[static_cast<size_t>(k)] = ad::constant(t);
        for (int i = 0; i < t.dim(0); ++i)
            for (int anc = 0; anc < 3; ++anc) t.at(i, anc * 5 + 4) += 7.5;
        b[static_cast<size_t>(k)] = ad::constant(t);
    }
    auto pa = fusion::extract_predictions(a, layout);
    auto pb = fusion::extract_predictions(b, layout);
    for (int i = 0; i < pa.m(); ++i) CHECK(std::abs(pa.confidence[i] - pb.confidence[i]) < 1e-6);
    CHECK(fusion::argmax_confidence(pa) == fusion::argmax_confidence(pb));
}

TEST_CASE("mass concentrates on the boosted resolution (closed form)") {
    const AnchorLayout layout(416);
    std::array<ad::Var, 3> head_out;
    for (int k = 0; k < 3; ++k) {
        Tensor t({layout.specs()[k].cells(), 15});
        if (k == 0)
            for (int i = 0; i < t.dim(0); ++i)
                for (int anc = 0; anc < 3; ++anc) t.at(i, anc * 5 + 4) = 10.0;
        head_out[static_cast<size_t>(k)] = ad::constant(t);
    }
    auto p = fusion::extract_predictions(head_out, layout);
    double k0_mass = 0;
    for (int i = 0; i < 3 * 169; ++i) k0_mass += p.confidence[i];
    const double bound = (3 * 169 * std::exp(10.0)) / (3 * 169 * std::exp(10.0) + 10140.0);
    CHECK(k0_mass >= doctest::Approx(bound).epsilon(1e-9));
}

TEST_CASE("select_box decodes the dominant anchor") {
    const AnchorLayout layout(96);
    std::array<ad::Var, 3> head_out;
    for (int k = 0; k < 3; ++k)
        head_out[static_cast<size_t>(k)] = ad::constant(Tensor({layout.specs()[k].cells(), 15}));
    // boost one anchor on the stride-16 grid: k=1, cell 3, anchor 2
    head_out[1]->value.at(3, 2 * 5 + 4) = 100.0;
    auto p = fusion::extract_predictions(head_out, layout);
    const int expected = layout.flat_index({1, 3 / layout.specs()[1].w, 3 % layout.specs()[1].w, 2});
    CHECK(fusion::argmax_confidence(p) == expected);
    const Box box = fusion::select_box(p);
    const Box direct = decode_prediction({0, 0, 0, 0}, layout.anchors()[1][2],
                                         3 / layout.specs()[1].w, 3 % layout.specs()[1].w,
                                         layout.specs()[1]);
    CHECK(box.x == doctest::Approx(direct.x));
    CHECK(box.w == doctest::Approx(direct.w));
}

TEST_CASE("select_box equals a brute-force scan on random predictions") {
    const AnchorLayout layout(96);
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        std::array<ad::Var, 3> head_out;
        for (int k = 0; k < 3; ++k)
            head_out[static_cast<size_t>(k)] =
                ad::constant(random_tensor({layout.specs()[k].cells(), 15}, rng, -3, 3));
        auto p = fusion::extract_predictions(head_out, layout);
        // independent scan: max probability, lowest index on ties
        int best = 0;
        for (int i = 1; i < p.m(); ++i)
            if (p.confidence[i] > p.confidence[best]) best = i;
        const AnchorRef ref = layout.ref(best);
        const Box expect = decode_prediction(
            {p.offsets.at(best, 0), p.offsets.at(best, 1), p.offsets.at(best, 2), p.offsets.at(best, 3)},
            layout.anchors()[ref.k][ref.a], ref.r, ref.c, layout.specs()[ref.k]);
        const Box got = fusion::select_box(p);
        CHECK(got.x == doctest::Approx(expect.x));
        CHECK(got.y == doctest::Approx(expect.y));
        CHECK(got.w == doctest::Approx(expect.w));
        CHECK(got.h == doctest::Approx(expect.h));
    }
}

TEST_CASE("fuse + predict gradients match finite differences at tiny shapes") {
    nn::ParamRegistry reg;
    nn::Init init(17);
    std::array<nn::Linear, 3> fuse_proj = {make_linear(reg, init, "f0", 24, 8),
                                           make_linear(reg, init, "f1", 24, 8),
                                           make_linear(reg, init, "f2", 24, 8)};
    std::array<nn::Linear, 3> heads = {make_linear(reg, init, "h0", 8, 15),
                                       make_linear(reg, init, "h1", 8, 15),
                                       make_linear(reg, init, "h2", 8, 15)};
    const std::array<int, 3> cells = {4, 16, 64};  // 2x2, 4x4, 8x8 grids
    std::mt19937_64 rng(19);
    std::vector<Tensor> inputs;
    for (int k = 0; k < 3; ++k) {
        inputs.push_back(random_tensor({cells[static_cast<size_t>(k)], 8}, rng));  // G
        inputs.push_back(random_tensor({cells[static_cast<size_t>(k)], 8}, rng));  // T'
        inputs.push_back(random_tensor({cells[static_cast<size_t>(k)], 8}, rng));  // V
    }
    auto build = [&](const std::vector<ad::Var>& v) {
        std::array<ad::Var, 3> head_out;
        for (int k = 0; k < 3; ++k) {
            auto fused = fusion::fuse(v[static_cast<size_t>(3 * k)], v[static_cast<size_t>(3 * k + 1)],
                                      v[static_cast<size_t>(3 * k + 2)], fuse_proj[static_cast<size_t>(k)]);
            head_out[static_cast<size_t>(k)] = fusion::head(fused, heads[static_cast<size_t>(k)]);
        }
        auto logits = fusion::gather_logits(head_out);
        std::mt19937_64 wr(23);
        auto spot = ad::sum_all(
            ad::mul(logits, ad::constant(random_tensor(logits->value.shape(), wr))));
        // include the offsets path through one cell
        return ad::add(spot, ad::sum_all(ad::head_offsets_at(head_out[1], 2, 1)));
    };
    CHECK(gradcheck::check_inputs(build, inputs, 1e-3, 29, 15) < 1e-3);

    // and through the fuse/head weights
    std::vector<ad::Var> params;
    for (auto& p : reg.params()) params.push_back(p.var);
    std::vector<ad::Var> fixed_inputs;
    for (auto& t : inputs) fixed_inputs.push_back(ad::constant(t));
    auto forward = [&]() { return build(fixed_inputs); };
    CHECK(gradcheck::check_params(forward, params, 1e-3, 31, 10) < 1e-3);
}
