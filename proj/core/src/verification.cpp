#include "vg/verification.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vg/text_encoder.hpp"

namespace vg::verify {

std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> theta, double eps) {
    std::vector<double> grad(theta.size());
    for (size_t i = 0; i < theta.size(); ++i) {
        const double orig = theta[i];
        theta[i] = orig + eps;
        const double fp = f(theta);
        theta[i] = orig - eps;
        const double fm = f(theta);
        theta[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_diff_grad: non-finite function value");
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

GradCheckReport grad_check(const std::function<double(const std::vector<double>&)>& f,
                           const std::vector<double>& theta, const std::vector<double>& analytic,
                           double threshold, int sample_count, std::mt19937_64& rng, double eps) {
    std::vector<size_t> coords(theta.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (sample_count > 0 && sample_count < static_cast<int>(theta.size())) {
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(static_cast<size_t>(sample_count));
    }
    GradCheckReport report;
    report.threshold = threshold;
    std::vector<double> point = theta;
    for (size_t ci : coords) {
        const double orig = point[ci];
        point[ci] = orig + eps;
        const double fp = f(point);
        point[ci] = orig - eps;
        const double fm = f(point);
        point[ci] = orig;
        const double gn = (fp - fm) / (2.0 * eps);
        const double ga = analytic[ci];
        const double rel = std::abs(ga - gn) / std::max({std::abs(ga), std::abs(gn), 1e-8});
        report.rel_errors.push_back(rel);
        report.max_rel_error = std::max(report.max_rel_error, rel);
    }
    report.pass = report.max_rel_error < threshold;
    return report;
}

namespace {

bool is_rel_left(const data::PlacedShape& a, const data::PlacedShape& b) { return a.cx < b.cx; }
bool is_rel_right(const data::PlacedShape& a, const data::PlacedShape& b) { return a.cx > b.cx; }
bool is_rel_above(const data::PlacedShape& a, const data::PlacedShape& b) { return a.cy < b.cy; }
bool is_rel_below(const data::PlacedShape& a, const data::PlacedShape& b) { return a.cy > b.cy; }

int name_index(const std::vector<std::string>& names, const std::string& word) {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == word) return static_cast<int>(i);
    return -1;
}

}  // namespace

int brute_force_referent(const data::SceneSpec& scene, const std::string& query) {
    const auto tokens = text::tokenize(query).tokens;
    if (tokens.size() < 3 || tokens[0] != "the")
        throw data::DataError("query does not follow the grammar: " + query);

    const int ordinal = name_index(data::kOrdinalNames, tokens[1]);
    std::vector<int> matches;

    if (ordinal >= 0) {
        // "the <ordinal> <shape> from the left"
        if (tokens.size() != 6 || tokens[3] != "from" || tokens[4] != "the" || tokens[5] != "left")
            throw data::DataError("bad ordinal query: " + query);
        const int shape = name_index(data::kShapeNames, tokens[2]);
        if (shape < 0) throw data::DataError("unknown shape in query: " + query);
        std::vector<int> of_shape;
        for (size_t i = 0; i < scene.shapes.size(); ++i)
            if (static_cast<int>(scene.shapes[i].type) == shape) of_shape.push_back(static_cast<int>(i));
        std::sort(of_shape.begin(), of_shape.end(), [&](int a, int b) {
            return scene.shapes[static_cast<size_t>(a)].cx < scene.shapes[static_cast<size_t>(b)].cx;
        });
        if (ordinal < static_cast<int>(of_shape.size())) {
            // equal centers at the rank boundary would be ambiguous
            const double cx = scene.shapes[static_cast<size_t>(of_shape[static_cast<size_t>(ordinal)])].cx;
            int same = 0;
            for (int idx : of_shape)
                if (scene.shapes[static_cast<size_t>(idx)].cx == cx) ++same;
            if (same > 1) throw data::DataError("ambiguous referent for query: " + query);
            matches.push_back(of_shape[static_cast<size_t>(ordinal)]);
        }
    } else {
        const int color = name_index(data::kColorNames, tokens[1]);
        const int shape = name_index(data::kShapeNames, tokens[2]);
        if (color < 0 || shape < 0) throw data::DataError("unknown color/shape in query: " + query);

        if (tokens.size() == 3) {
            // "the <color> <shape>"
            for (size_t i = 0; i < scene.shapes.size(); ++i)
                if (scene.shapes[i].color == color && static_cast<int>(scene.shapes[i].type) == shape)
                    matches.push_back(static_cast<int>(i));
        } else {
            // "the <c1> <s1> <rel> the <c2> <s2>"
            size_t pos = 3;
            bool (*rel)(const data::PlacedShape&, const data::PlacedShape&) = nullptr;
            if (tokens[pos] == "left" || tokens[pos] == "right") {
                if (pos + 1 >= tokens.size() || tokens[pos + 1] != "of")
                    throw data::DataError("bad relation in query: " + query);
                rel = tokens[pos] == "left" ? is_rel_left : is_rel_right;
                pos += 2;
            } else if (tokens[pos] == "above" || tokens[pos] == "below") {
                rel = tokens[pos] == "above" ? is_rel_above : is_rel_below;
                pos += 1;
            } else {
                throw data::DataError("bad relation in query: " + query);
            }
            if (pos + 3 != tokens.size() || tokens[pos] != "the")
                throw data::DataError("bad anchor phrase in query: " + query);
            const int color2 = name_index(data::kColorNames, tokens[pos + 1]);
            const int shape2 = name_index(data::kShapeNames, tokens[pos + 2]);
            if (color2 < 0 || shape2 < 0) throw data::DataError("unknown anchor in query: " + query);

            std::vector<int> anchors;
            for (size_t i = 0; i < scene.shapes.size(); ++i)
                if (scene.shapes[i].color == color2 && static_cast<int>(scene.shapes[i].type) == shape2)
                    anchors.push_back(static_cast<int>(i));
            if (anchors.size() != 1)
                throw data::DataError("anchor phrase is not unique in query: " + query);
            const auto& anchor = scene.shapes[static_cast<size_t>(anchors[0])];
            for (size_t i = 0; i < scene.shapes.size(); ++i) {
                if (static_cast<int>(i) == anchors[0]) continue;
                const auto& s = scene.shapes[i];
                if (s.color == color && static_cast<int>(s.type) == shape && rel(s, anchor))
                    matches.push_back(static_cast<int>(i));
            }
        }
    }

    if (matches.empty()) throw data::DataError("no referent for query: " + query);
    if (matches.size() > 1) throw data::DataError("ambiguous referent for query: " + query);
    return matches[0];
}

std::pair<int, double> exhaustive_anchor_scan(const Box& gt, const AnchorLayout& layout) {
    int best = 0;
    double best_iou = -1.0;
    for (int flat = 0; flat < layout.total(); ++flat) {
        const AnchorRef ref = layout.ref(flat);
        const double v = iou(gt, layout.placement(ref));
        if (v > best_iou) {
            best_iou = v;
            best = flat;
        }
    }
    return {best, best_iou};
}

}  // namespace vg::verify
