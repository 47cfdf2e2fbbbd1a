// Acceptance suite: one pass/fail line per criterion. Exit code is the
// number of failed criteria. Pass criterion numbers as arguments to run a
// subset (e.g. "acceptance 1 2 3").

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "../tests/gradcheck_util.hpp"
#include "vg/train_eval.hpp"
#include "vg/verification.hpp"
#include "vg/vt_attention.hpp"

using namespace vg;
using gradcheck::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Ctx {
    std::ostringstream detail;
};

double sec_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ad::Var spot(const ad::Var& x, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return ad::sum_all(ad::mul(x, ad::constant(random_tensor(x->value.shape(), rng))));
}

// ---------------------------------------------------------------- criterion 1

bool gradient_suite(Ctx& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0;
    std::mt19937_64 rng(1);

    // word_attention -> text_feature_matrix  (8x8 grid, D=8, n=3)
    Tensor g = random_tensor({64, 8}, rng);
    Tensor q = random_tensor({3, 8}, rng);
    worst = std::max(worst, gradcheck::check_inputs(
        [](const std::vector<ad::Var>& v) {
            auto m = attn::match_matrix(v[0], v[1]);
            return spot(attn::text_feature_matrix(attn::word_attention(m, 3), v[1]), 2);
        },
        {g, q}, 1e-3, 3, 30));

    // attention_map -> attend_visual
    worst = std::max(worst, gradcheck::check_inputs(
        [](const std::vector<ad::Var>& v) {
            auto m = attn::match_matrix(v[0], v[1]);
            return spot(attn::attend_visual(attn::attention_map(m, 3), v[0]), 4);
        },
        {g, q}, 1e-3, 5, 30));

    // fuse -> predict over 2x2 / 4x4 / 8x8 grids, D = D' = 8
    {
        nn::ParamRegistry reg;
        nn::Init init(7);
        std::array<nn::Linear, 3> fuse_proj = {nn::Linear(reg, init, "f0", 24, 8, false),
                                               nn::Linear(reg, init, "f1", 24, 8, false),
                                               nn::Linear(reg, init, "f2", 24, 8, false)};
        std::array<nn::Linear, 3> heads = {nn::Linear(reg, init, "h0", 8, 15, false),
                                           nn::Linear(reg, init, "h1", 8, 15, false),
                                           nn::Linear(reg, init, "h2", 8, 15, false)};
        const std::array<int, 3> cells = {4, 16, 64};
        std::vector<Tensor> inputs;
        for (int k = 0; k < 3; ++k)
            for (int part = 0; part < 3; ++part)
                inputs.push_back(random_tensor({cells[static_cast<size_t>(k)], 8}, rng));
        auto build = [&](const std::vector<ad::Var>& v) {
            std::array<ad::Var, 3> head_out;
            for (int k = 0; k < 3; ++k) {
                auto fused = fusion::fuse(v[static_cast<size_t>(3 * k)],
                                          v[static_cast<size_t>(3 * k + 1)],
                                          v[static_cast<size_t>(3 * k + 2)],
                                          fuse_proj[static_cast<size_t>(k)]);
                head_out[static_cast<size_t>(k)] = fusion::head(fused, heads[static_cast<size_t>(k)]);
            }
            return spot(fusion::gather_logits(head_out), 8);
        };
        worst = std::max(worst, gradcheck::check_inputs(build, inputs, 1e-3, 9, 10));
    }

    // mask_loss, confidence_loss, box_regression_loss
    {
        BinaryMask mask;
        mask.h = mask.w = 8;
        for (int i = 0; i < 64; ++i) mask.values.push_back(rng() % 2 ? 1 : 0);
        worst = std::max(worst, gradcheck::check_inputs(
            [&](const std::vector<ad::Var>& v) { return losses::mask_loss_k(v[0], mask); },
            {random_tensor({64}, rng, -3, 3)}, 1e-3, 11, 30));
        worst = std::max(worst, gradcheck::check_inputs(
            [](const std::vector<ad::Var>& v) { return losses::confidence_loss(v[0], 17); },
            {random_tensor({100}, rng, -3, 3)}, 1e-3, 12, 30));
        const std::array<double, 4> tgt = {0.2, -0.3, 0.7, 0.1};
        worst = std::max(worst, gradcheck::check_inputs(
            [&](const std::vector<ad::Var>& v) { return losses::box_regression_loss(v[0], tgt); },
            {random_tensor({4}, rng)}, 1e-3, 13, 0));
    }
    const bool parts_ok = worst < 1e-3;
    ctx.detail << "component max rel err " << worst;

    // end-to-end composition: full tiny model at 64px input, D=D'=8
    double e2e = 0;
    {
        RunConfig cfg;
        cfg.preset = "tiny";
        cfg.input_size = 64;
        cfg.d_model = 8;
        cfg.d_fused = 8;
        cfg.lstm_hidden = 8;
        cfg.embed_dim = 8;
        cfg.seed = 15;
        auto vocab = text::Vocabulary::build({"the red circle left of the blue square"}, 8,
                                             nullptr, 15);
        GroundingModel model(cfg.model_config(), vocab);
        Tensor image = random_tensor({1, 3, 64, 64}, rng, 0, 1);
        text::TokenizedQuery tq = text::tokenize("the red circle");
        vocab.encode(tq, 40);
        const Box gt{14, 20, 22, 18};
        const losses::GroundingTarget target = losses::make_target(gt, model.layout());
        auto forward = [&]() {
            auto out = model.forward(image, {tq.ids}, true);
            const auto& s = out.samples[0];
            return losses::grounding_loss({s.xmodal[0].beta_logits, s.xmodal[1].beta_logits,
                                           s.xmodal[2].beta_logits},
                                          s.logits, s.head_out, target, model.layout(), 0.1)
                .objective;
        };
        // 20 sampled parameters spread across the parameter list
        std::vector<ad::Var> params;
        for (auto& p : model.registry().params()) params.push_back(p.var);
        std::shuffle(params.begin(), params.end(), rng);
        params.resize(10);
        e2e = gradcheck::check_params(forward, params, 1e-2, 17, 2);
    }
    ctx.detail << ", end-to-end " << e2e;
    const double elapsed = sec_since(t0);
    ctx.detail << ", " << elapsed << " s";
    return parts_ok && e2e < 1e-2 && elapsed < 120.0;
}

// ---------------------------------------------------------------- criterion 2

bool attention_invariants(Ctx& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(21);
    bool ok = true;
    for (int k = 0; k < 3 && ok; ++k) {
        const int cells = std::array<int, 3>{9, 36, 144}[static_cast<size_t>(k)];
        for (int trial = 0; trial < 100 && ok; ++trial) {
            const int n = 2 + static_cast<int>(rng() % 9);
            Tensor m = random_tensor({cells, n}, rng, -6, 6);
            const Tensor alpha = attn::word_attention(ad::constant(m), n)->value;
            for (int r = 0; r < cells; ++r) {
                double s = 0;
                for (int j = 0; j < n; ++j) s += alpha.at(r, j);
                if (std::abs(s - 1.0) > 1e-6) ok = false;
            }
            // shift invariance
            Tensor shifted = m;
            const int row = static_cast<int>(rng() % cells);
            for (int j = 0; j < n; ++j) shifted.at(row, j) += 57.0;
            const Tensor alpha2 = attn::word_attention(ad::constant(shifted), n)->value;
            for (int j = 0; j < n; ++j)
                if (std::abs(alpha2.at(row, j) - alpha.at(row, j)) > 1e-6) ok = false;
            // beta in (0,1) and monotone in single entries
            const Tensor beta = attn::attention_map(ad::constant(m), n)->value;
            for (int r = 0; r < cells; ++r)
                if (!(beta[r] > 0.0 && beta[r] < 1.0)) ok = false;
            Tensor bumped = m;
            const int rc = static_cast<int>(rng() % cells), cc = static_cast<int>(rng() % n);
            bumped.at(rc, cc) += 0.5;
            if (!(attn::attention_map(ad::constant(bumped), n)->value[rc] > beta[rc])) ok = false;
        }
    }
    const double elapsed = sec_since(t0);
    ctx.detail << "100 trials x 3 resolutions, " << elapsed << " s";
    return ok && elapsed < 30.0;
}

// ---------------------------------------------------------------- criterion 3

bool oracle_equivalence(Ctx& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    const AnchorLayout layout(416);
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0, 1);
    bool ok = true;
    for (int i = 0; i < 50; ++i) {
        const double w = 4 + u(rng) * 200, h = 4 + u(rng) * 200;
        const Box gt{u(rng) * (416 - w), u(rng) * (416 - h), w, h};
        if (assign_best_anchor(gt, layout) != verify::exhaustive_anchor_scan(gt, layout).first)
            ok = false;
    }
    for (int i = 0; i < 100; ++i) {
        const double w = u(rng) * 400, h = u(rng) * 400;
        const Box gt{u(rng) * (416 - w), u(rng) * (416 - h), w, h};
        for (const auto& spec : layout.specs()) {
            const BinaryMask mask = rasterize_mask(gt, spec);
            for (int r = 0; r < spec.h; ++r)
                for (int c = 0; c < spec.w; ++c) {
                    const int px = c * spec.stride + spec.stride / 2;
                    const int py = r * spec.stride + spec.stride / 2;
                    const bool inside =
                        px > gt.x && px < gt.x + gt.w && py > gt.y && py < gt.y + gt.h;
                    if (mask.at(r, c) != (inside ? 1 : 0)) ok = false;
                }
        }
    }
    const double elapsed = sec_since(t0);
    ctx.detail << "anchor scan x50, mask oracle x100, " << elapsed << " s";
    return ok && elapsed < 60.0;
}

// ---------------------------------------------------------------- criterion 4

bool loss_arithmetic(Ctx& ctx) {
    std::mt19937_64 rng(41);
    bool ok = true;
    // mask loss vs hand oracle within 1e-9
    for (int trial = 0; trial < 20; ++trial) {
        Tensor logits = random_tensor({64}, rng, -4, 4);
        BinaryMask mask;
        mask.h = mask.w = 8;
        for (int i = 0; i < 64; ++i) mask.values.push_back(rng() % 2 ? 1 : 0);
        double oracle = 0;
        for (int i = 0; i < 64; ++i) {
            const double beta = 1.0 / (1.0 + std::exp(-logits[i]));
            const double y = mask.values[static_cast<size_t>(i)];
            oracle -= y * std::log(beta) + (1 - y) * std::log(1 - beta);
        }
        oracle /= 64;
        if (std::abs(losses::mask_loss_k(ad::constant(logits), mask)->value[0] - oracle) > 1e-9)
            ok = false;
    }
    // beta == 0.5 -> ln 2
    {
        BinaryMask mask;
        mask.h = mask.w = 4;
        mask.values.assign(16, 1);
        const double v = losses::mask_loss_k(ad::constant(Tensor({16})), mask)->value[0];
        if (std::abs(v - std::log(2.0)) > 1e-9) ok = false;
    }
    // uniform-logit confidence loss = ln m with m = 10647
    {
        const double v = losses::confidence_loss(ad::constant(Tensor({10647})), 5000)->value[0];
        if (std::abs(v - std::log(10647.0)) > 1e-6) ok = false;
    }
    // exact Eq. 5 combination
    {
        auto b = losses::total_loss(1.25, 0.75, {0.4, 0.35, 0.25}, 0.1);
        if (b.total != (1.25 + 0.75) + 0.1 * (0.4 + 0.35 + 0.25)) ok = false;
        if (b.yolo != 2.0) ok = false;
    }
    ctx.detail << "bce oracle 1e-9, ln2, ln(10647), exact total";
    return ok;
}

// ---------------------------------------------------------------- criterion 5

bool round_trips(Ctx& ctx) {
    std::mt19937_64 rng(51);
    std::uniform_real_distribution<double> u(0, 1);
    bool ok = true;
    // encode/decode within 1e-5 px (encode contract: center-containing cell)
    const AnchorLayout layout(416);
    for (int i = 0; i < 100; ++i) {
        const double w = 4 + u(rng) * 200, h = 4 + u(rng) * 200;
        const Box gt{u(rng) * (416 - w), u(rng) * (416 - h), w, h};
        const int k = static_cast<int>(rng() % 3), a = static_cast<int>(rng() % 3);
        const GridSpec& spec = layout.specs()[k];
        const int col = std::min(spec.w - 1, static_cast<int>(gt.cx() / spec.stride));
        const int row = std::min(spec.h - 1, static_cast<int>(gt.cy() / spec.stride));
        const auto off = losses::encode_gt_offsets(gt, layout.anchors()[k][a], row, col, spec);
        const Box back = decode_prediction(off, layout.anchors()[k][a], row, col, spec);
        if (std::abs(back.x - gt.x) > 1e-5 || std::abs(back.y - gt.y) > 1e-5 ||
            std::abs(back.w - gt.w) > 1e-5 || std::abs(back.h - gt.h) > 1e-5)
            ok = false;
    }
    // letterbox inverse within 0.5 px
    for (int i = 0; i < 30; ++i) {
        const int w = 60 + static_cast<int>(rng() % 800), h = 60 + static_cast<int>(rng() % 800);
        data::Sample s;
        s.image = cv::Mat(h, w, CV_8UC3, cv::Scalar(5, 5, 5));
        s.query = "q";
        s.gt = {u(rng) * w / 2, u(rng) * h / 2, 1 + u(rng) * w / 3, 1 + u(rng) * h / 3};
        auto lb = data::letterbox(s, 416);
        const Box back = lb.tf.invert(lb.gt);
        if (std::abs(back.x - s.gt.x) > 0.5 || std::abs(back.y - s.gt.y) > 0.5 ||
            std::abs(back.w - s.gt.w) > 0.5 || std::abs(back.h - s.gt.h) > 0.5)
            ok = false;
    }
    // checkpoint save/load -> bit-exact eval predictions
    {
        RunConfig cfg;
        cfg.preset = "tiny";
        cfg.input_size = 96;
        cfg.d_model = 16;
        cfg.d_fused = 16;
        cfg.lstm_hidden = 8;
        cfg.embed_dim = 8;
        cfg.seed = 53;
        auto samples = data::generate_synthetic(55, 10, 192);
        std::vector<std::string> queries;
        for (auto& s : samples) queries.push_back(s.query);
        auto vocab = text::Vocabulary::build(queries, cfg.embed_dim, nullptr, cfg.seed);
        GroundingModel model(cfg.model_config(), vocab);
        const std::string path =
            (fs::temp_directory_path() / "vg_accept_ckpt.vgck").string();
        train::save_checkpoint(train::snapshot(model, vocab, nullptr, cfg, 0, 0), path);
        auto restored = train::restore_model(train::load_checkpoint(path));
        auto r1 = train::evaluate(model, vocab, samples);
        auto r2 = train::evaluate(*restored.model, restored.vocab, samples);
        for (size_t i = 0; i < r1.records.size(); ++i) {
            if (r1.records[i].predicted.x != r2.records[i].predicted.x ||
                r1.records[i].predicted.y != r2.records[i].predicted.y ||
                r1.records[i].predicted.w != r2.records[i].predicted.w ||
                r1.records[i].predicted.h != r2.records[i].predicted.h ||
                r1.records[i].confidence != r2.records[i].confidence)
                ok = false;
        }
        fs::remove(path);
    }
    ctx.detail << "offsets 1e-5 px, letterbox 0.5 px, checkpoint bit-exact";
    return ok;
}

// ---------------------------------------------------------------- criterion 6

bool overfit_check(Ctx& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg;
    cfg.preset = "tiny";
    cfg.input_size = 96;
    cfg.d_model = 32;
    cfg.d_fused = 32;
    cfg.lstm_hidden = 16;
    cfg.embed_dim = 16;
    cfg.batch_size = 1;
    cfg.epochs = 500;  // one sample -> one step per epoch
    cfg.base_lr = 1e-3;
    cfg.backbone_lr_scale = 1.0;
    cfg.lambda_mask = 0.1;
    cfg.seed = 61;
    cfg.augment = false;
    auto sample = data::generate_synthetic(63, 1, 416);
    auto outcome = train::train(cfg, sample, {}, "");
    auto report = train::evaluate(*outcome.model, outcome.vocab, sample);
    const double elapsed = sec_since(t0);
    ctx.detail << "iou " << report.records[0].iou << ", loss " << outcome.initial_total << " -> "
               << outcome.final_total << ", " << elapsed << " s";
    return report.records[0].iou > 0.5 && outcome.final_total < 0.1 * outcome.initial_total &&
           elapsed < 300.0;
}

// ------------------------------------------------------------ criteria 7 + 8

RunConfig desk_config() {
    RunConfig cfg;
    cfg.preset = "tiny";
    cfg.input_size = 192;
    cfg.d_model = 64;
    cfg.d_fused = 64;
    cfg.lstm_hidden = 64;
    cfg.embed_dim = 32;
    cfg.batch_size = 8;
    cfg.epochs = 10;
    cfg.base_lr = 1e-3;
    cfg.backbone_lr_scale = 1.0;
    cfg.lambda_mask = 0.1;
    cfg.seed = 71;
    cfg.augment = true;
    return cfg;
}

struct DeskRuns {
    bool ran = false;
    double ap50 = 0;
    double margin_with_mask = 0;
    double margin_without_mask = 0;
    double train_seconds = 0;
};

DeskRuns& desk_runs() {
    static DeskRuns r;
    return r;
}

void run_desk_training() {
    DeskRuns& r = desk_runs();
    if (r.ran) return;
    auto train_set = data::generate_synthetic(1001, 2000, 416);
    auto eval_set = data::generate_synthetic(2002, 200, 416);
    RunConfig cfg = desk_config();

    const auto t0 = std::chrono::steady_clock::now();
    auto with_mask = train::train(cfg, train_set, eval_set, "");
    r.train_seconds = sec_since(t0);
    r.ap50 = with_mask.best_ap50;
    r.margin_with_mask = train::beta_margin(*with_mask.model, with_mask.vocab, eval_set);

    RunConfig no_mask_cfg = cfg;
    no_mask_cfg.lambda_mask = 0.0;
    auto without_mask = train::train(no_mask_cfg, train_set, {}, "");
    r.margin_without_mask =
        train::beta_margin(*without_mask.model, without_mask.vocab, eval_set);
    r.ran = true;
}

bool desk_scale_learning(Ctx& ctx) {
    run_desk_training();
    const DeskRuns& r = desk_runs();
    ctx.detail << "AP50 " << r.ap50 << " (target >= 70), train " << r.train_seconds << " s";
    return r.ap50 >= 70.0 && r.train_seconds < 2700.0;
}

bool mask_direction_check(Ctx& ctx) {
    run_desk_training();
    const DeskRuns& r = desk_runs();
    ctx.detail << "beta margin lambda=0.1: " << r.margin_with_mask
               << ", lambda=0: " << r.margin_without_mask;
    return r.margin_with_mask > r.margin_without_mask;
}

// ---------------------------------------------------------------- criterion 9

bool structural_constants(Ctx& ctx) {
    bool ok = true;
    const AnchorLayout layout(416);
    if (layout.total() != 10647) ok = false;
    if (3 * (13 * 13 + 26 * 26 + 52 * 52) != 10647) ok = false;
    // the nine priors, smallest to largest, partitioned three per resolution
    const std::array<std::pair<double, double>, 9> expected = {
        {{10, 13}, {16, 30}, {33, 23}, {30, 61}, {62, 45}, {59, 119}, {116, 90}, {156, 198},
         {373, 326}}};
    for (int i = 0; i < 9; ++i)
        if (kAnchors[static_cast<size_t>(i)].pw != expected[static_cast<size_t>(i)].first ||
            kAnchors[static_cast<size_t>(i)].ph != expected[static_cast<size_t>(i)].second)
            ok = false;
    const auto by_res = anchors_by_resolution();
    for (int k = 0; k < 3; ++k)
        for (int a = 0; a < 3; ++a)
            if (by_res[static_cast<size_t>(k)][static_cast<size_t>(a)].pw !=
                kAnchors[static_cast<size_t>((2 - k) * 3 + a)].pw)
                ok = false;
    // C_ij spot values
    const Tensor c = spatial_coord_features(GridSpec{2, 2, 32, 0});
    const std::array<double, 8> want = {0, 0, 0.25, 0.25, 0.5, 0.5, 0.5, 0.5};
    for (int i = 0; i < 8; ++i)
        if (std::abs(c.at(0, 0, i) - want[static_cast<size_t>(i)]) > 1e-12) ok = false;
    ctx.detail << "m = 10647, 9 anchors, coordinate vector spot values";
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    struct Criterion {
        int id;
        const char* name;
        std::function<bool(Ctx&)> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "gradient suite (components < 1e-3, end-to-end < 1e-2)", gradient_suite},
        {2, "attention invariants (row-stochastic, shift, range, monotone)", attention_invariants},
        {3, "oracle equivalence (anchor scan, mask rasterization)", oracle_equivalence},
        {4, "loss arithmetic (bce oracle, ln 2, ln m, exact total)", loss_arithmetic},
        {5, "round-trips (offsets, letterbox, checkpoint)", round_trips},
        {6, "single-sample overfit (iou > 0.5, loss < 10% initial)", overfit_check},
        {7, "desk-scale learning (synthetic AP50 >= 70)", desk_scale_learning},
        {8, "auxiliary-mask direction (beta margin larger with lambda=0.1)", mask_direction_check},
        {9, "structural constants (m, anchors, coordinate features)", structural_constants},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        Ctx ctx;
        bool pass = false;
        try {
            pass = c.run(ctx);
        } catch (const std::exception& e) {
            ctx.detail << "exception: " << e.what();
        }
        std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", c.id, c.name,
                    ctx.detail.str().c_str());
        std::fflush(stdout);
        if (!pass) ++failures;
    }
    return failures;
}
