#include "vg/data.hpp"

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "vg/text_encoder.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace vg::data {

const std::vector<std::string> kColorNames = {"red",  "green",   "blue",   "yellow",
                                              "cyan", "magenta", "orange", "purple"};
const std::vector<cv::Vec3b> kColorValues = {
    {220, 40, 40}, {40, 170, 60}, {50, 90, 230},  {235, 220, 50},
    {60, 200, 210}, {200, 60, 200}, {240, 140, 40}, {130, 60, 180}};
const std::vector<std::string> kShapeNames = {"circle", "square", "triangle"};
const std::vector<std::string> kOrdinalNames = {"first", "second", "third", "fourth"};

namespace {

double urand(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}
int irand(std::mt19937_64& rng, int lo, int hi) {  // inclusive
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

struct RelOp {
    std::string phrase;  // as it appears in the query
    bool (*test)(const PlacedShape&, const PlacedShape&);
};

const std::vector<RelOp> kRelations = {
    {"left of", [](const PlacedShape& a, const PlacedShape& b) { return a.cx < b.cx; }},
    {"right of", [](const PlacedShape& a, const PlacedShape& b) { return a.cx > b.cx; }},
    {"above", [](const PlacedShape& a, const PlacedShape& b) { return a.cy < b.cy; }},
    {"below", [](const PlacedShape& a, const PlacedShape& b) { return a.cy > b.cy; }},
};

// Scene with 3-8 shapes whose boxes barely overlap and whose centers are
// horizontally separated (keeps ordinal queries unambiguous).
bool draw_scene(SceneSpec& scene, std::mt19937_64& rng) {
    const int canvas = scene.canvas;
    const int want = irand(rng, 3, 8);
    scene.shapes.clear();
    int attempts = 0;
    while (static_cast<int>(scene.shapes.size()) < want && attempts < 200) {
        ++attempts;
        PlacedShape s;
        s.type = static_cast<ShapeType>(irand(rng, 0, 2));
        s.color = irand(rng, 0, static_cast<int>(kColorNames.size()) - 1);
        s.size = urand(rng, 0.12, 0.28) * canvas;
        const double half = s.size / 2;
        s.cx = urand(rng, half + 2, canvas - half - 2);
        s.cy = urand(rng, half + 2, canvas - half - 2);
        bool ok = true;
        for (const auto& other : scene.shapes) {
            if (iou(s.bbox(), other.bbox()) > 0.05 || std::abs(s.cx - other.cx) < 4.0) {
                ok = false;
                break;
            }
        }
        if (ok) scene.shapes.push_back(s);
    }
    return static_cast<int>(scene.shapes.size()) >= 3;
}

std::string describe(const PlacedShape& s) {
    return kColorNames[static_cast<size_t>(s.color)] + " " +
           kShapeNames[static_cast<size_t>(static_cast<int>(s.type))];
}

bool same_kind(const PlacedShape& a, const PlacedShape& b) {
    return a.color == b.color && a.type == b.type;
}

std::vector<int> kind_matches(const SceneSpec& scene, const PlacedShape& proto) {
    std::vector<int> out;
    for (size_t i = 0; i < scene.shapes.size(); ++i)
        if (same_kind(scene.shapes[i], proto)) out.push_back(static_cast<int>(i));
    return out;
}

// "the <color> <shape>": needs a kind that occurs exactly once.
bool try_simple_query(SceneSpec& scene, std::mt19937_64& rng) {
    std::vector<int> unique_kinds;
    for (size_t i = 0; i < scene.shapes.size(); ++i)
        if (kind_matches(scene, scene.shapes[i]).size() == 1) unique_kinds.push_back(static_cast<int>(i));
    if (unique_kinds.empty()) return false;
    scene.target = unique_kinds[static_cast<size_t>(irand(rng, 0, static_cast<int>(unique_kinds.size()) - 1))];
    scene.query = "the " + describe(scene.shapes[static_cast<size_t>(scene.target)]);
    return true;
}

// "the <c1> <s1> <rel> the <c2> <s2>": the anchor kind occurs once and
// exactly one <c1> <s1> object satisfies the relation to it.
bool try_relational_query(SceneSpec& scene, std::mt19937_64& rng) {
    std::vector<int> anchor_order(scene.shapes.size());
    for (size_t i = 0; i < anchor_order.size(); ++i) anchor_order[i] = static_cast<int>(i);
    std::shuffle(anchor_order.begin(), anchor_order.end(), rng);
    std::vector<int> rel_order = {0, 1, 2, 3};
    std::shuffle(rel_order.begin(), rel_order.end(), rng);

    for (int ai : anchor_order) {
        const auto& anchor = scene.shapes[static_cast<size_t>(ai)];
        if (kind_matches(scene, anchor).size() != 1) continue;
        for (int ri : rel_order) {
            const RelOp& rel = kRelations[static_cast<size_t>(ri)];
            // group candidates by kind; keep kinds with exactly one member
            // satisfying the relation
            std::vector<int> hits;
            for (size_t i = 0; i < scene.shapes.size(); ++i) {
                if (static_cast<int>(i) == ai) continue;
                if (!rel.test(scene.shapes[i], anchor)) continue;
                int kind_hits = 0;
                for (size_t j = 0; j < scene.shapes.size(); ++j)
                    if (static_cast<int>(j) != ai && same_kind(scene.shapes[j], scene.shapes[i]) &&
                        rel.test(scene.shapes[j], anchor))
                        ++kind_hits;
                if (kind_hits == 1) hits.push_back(static_cast<int>(i));
            }
            if (hits.empty()) continue;
            scene.target = hits[static_cast<size_t>(irand(rng, 0, static_cast<int>(hits.size()) - 1))];
            scene.query = "the " + describe(scene.shapes[static_cast<size_t>(scene.target)]) + " " +
                          rel.phrase + " the " + describe(anchor);
            return true;
        }
    }
    return false;
}

// "the <ordinal> <shape> from the left".
bool try_ordinal_query(SceneSpec& scene, std::mt19937_64& rng) {
    const int shape = irand(rng, 0, 2);
    std::vector<int> of_shape;
    for (size_t i = 0; i < scene.shapes.size(); ++i)
        if (static_cast<int>(scene.shapes[i].type) == shape) of_shape.push_back(static_cast<int>(i));
    if (of_shape.size() < 2) return false;  // an ordinal over one object is degenerate
    std::sort(of_shape.begin(), of_shape.end(), [&](int a, int b) {
        return scene.shapes[static_cast<size_t>(a)].cx < scene.shapes[static_cast<size_t>(b)].cx;
    });
    const int max_rank = std::min(static_cast<int>(of_shape.size()), 4) - 1;
    const int rank = irand(rng, 0, max_rank);
    scene.target = of_shape[static_cast<size_t>(rank)];
    scene.query = "the " + kOrdinalNames[static_cast<size_t>(rank)] + " " +
                  kShapeNames[static_cast<size_t>(shape)] + " from the left";
    return true;
}

cv::Mat render_scene(const SceneSpec& scene, std::mt19937_64& rng) {
    const int canvas = scene.canvas;
    const int base = irand(rng, 30, 70);
    cv::Mat img(canvas, canvas, CV_8UC3, cv::Scalar(base, base, base));
    // gray speckle so the background is not flat
    for (int y = 0; y < canvas; ++y) {
        cv::Vec3b* row = img.ptr<cv::Vec3b>(y);
        for (int x = 0; x < canvas; ++x) {
            const int n = irand(rng, -8, 8);
            for (int c = 0; c < 3; ++c)
                row[x][c] = static_cast<uchar>(std::clamp(base + n, 0, 255));
        }
    }
    for (const auto& s : scene.shapes) {
        const cv::Vec3b rgb = kColorValues[static_cast<size_t>(s.color)];
        const cv::Scalar color(rgb[0], rgb[1], rgb[2]);
        const double half = s.size / 2;
        switch (s.type) {
            case ShapeType::circle:
                cv::circle(img, cv::Point2d(s.cx, s.cy), static_cast<int>(half), color, cv::FILLED);
                break;
            case ShapeType::square:
                cv::rectangle(img, cv::Point2d(s.cx - half, s.cy - half),
                              cv::Point2d(s.cx + half, s.cy + half), color, cv::FILLED);
                break;
            case ShapeType::triangle: {
                std::vector<cv::Point> pts = {
                    cv::Point(static_cast<int>(s.cx), static_cast<int>(s.cy - half)),
                    cv::Point(static_cast<int>(s.cx - half), static_cast<int>(s.cy + half)),
                    cv::Point(static_cast<int>(s.cx + half), static_cast<int>(s.cy + half))};
                cv::fillConvexPoly(img, pts, color);
                break;
            }
        }
    }
    return img;
}

}  // namespace

std::vector<SyntheticSample> generate_synthetic_scenes(std::uint64_t seed, int count, int canvas) {
    if (count < 1) throw DataError("synthetic corpus count must be >= 1");
    std::mt19937_64 rng(seed);
    std::vector<SyntheticSample> out;
    out.reserve(static_cast<size_t>(count));
    while (static_cast<int>(out.size()) < count) {
        SceneSpec scene;
        scene.canvas = canvas;
        if (!draw_scene(scene, rng)) continue;
        const double roll = urand(rng, 0.0, 1.0);
        bool ok = false;
        if (roll < 0.5)
            ok = try_simple_query(scene, rng);
        else if (roll < 0.8)
            ok = try_relational_query(scene, rng);
        else
            ok = try_ordinal_query(scene, rng);
        if (!ok) continue;

        SyntheticSample rec;
        rec.sample.image = render_scene(scene, rng);
        rec.sample.query = scene.query;
        rec.sample.gt = scene.shapes[static_cast<size_t>(scene.target)].bbox().clipped(canvas, canvas);
        std::ostringstream id;
        id << "syn-" << std::setw(6) << std::setfill('0') << out.size();
        rec.sample.id = id.str();
        rec.scene = std::move(scene);
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<Sample> generate_synthetic(std::uint64_t seed, int count, int canvas) {
    std::vector<Sample> out;
    for (auto& rec : generate_synthetic_scenes(seed, count, canvas)) out.push_back(std::move(rec.sample));
    return out;
}

LoadReport load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    const fs::path base = fs::path(path).parent_path();
    LoadReport report;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object()) {
            report.errors.push_back(where + ": malformed record");
            continue;
        }
        if (!rec.contains("id") || !rec.contains("image_path") || !rec.contains("query") ||
            !rec.contains("box")) {
            report.errors.push_back(where + ": missing field");
            continue;
        }
        Sample s;
        s.id = rec["id"].get<std::string>();
        s.query = rec["query"].get<std::string>();
        if (s.query.find_first_not_of(" \t") == std::string::npos) {
            report.errors.push_back(where + ": empty query");
            continue;
        }
        const auto& box = rec["box"];
        if (!box.is_array() || box.size() != 4) {
            report.errors.push_back(where + ": malformed box");
            continue;
        }
        s.gt = Box{box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                   box[3].get<double>()};
        if (s.gt.w <= 0 || s.gt.h <= 0) {
            report.errors.push_back(where + ": degenerate box (non-positive size)");
            continue;
        }
        const fs::path img_path = base / rec["image_path"].get<std::string>();
        cv::Mat bgr = cv::imread(img_path.string(), cv::IMREAD_COLOR);
        if (bgr.empty()) {
            report.errors.push_back(where + ": cannot read image " + img_path.string());
            continue;
        }
        cv::cvtColor(bgr, s.image, cv::COLOR_BGR2RGB);
        const Box clipped = s.gt.clipped(s.image.cols, s.image.rows);
        if (clipped.w <= 0 || clipped.h <= 0) {
            report.errors.push_back(where + ": box lies outside the image");
            continue;
        }
        if (clipped.x != s.gt.x || clipped.y != s.gt.y || clipped.w != s.gt.w ||
            clipped.h != s.gt.h) {
            report.warnings.push_back(where + ": box clipped to image bounds");
            s.gt = clipped;
        }
        report.samples.push_back(std::move(s));
    }
    return report;
}

void save_corpus(const std::vector<Sample>& samples, const std::string& out_dir) {
    const fs::path dir(out_dir);
    fs::create_directories(dir / "images");
    std::ofstream manifest(dir / "manifest.jsonl");
    if (!manifest) throw DataError("cannot write manifest under " + out_dir);
    for (const auto& s : samples) {
        const std::string rel = "images/" + s.id + ".png";
        cv::Mat bgr;
        cv::cvtColor(s.image, bgr, cv::COLOR_RGB2BGR);
        if (!cv::imwrite((dir / rel).string(), bgr))
            throw DataError("cannot write image " + (dir / rel).string());
        json rec;
        rec["id"] = s.id;
        rec["image_path"] = rel;
        rec["query"] = s.query;
        rec["box"] = {s.gt.x, s.gt.y, s.gt.w, s.gt.h};
        manifest << rec.dump() << "\n";
    }
}

Box LetterboxTransform::apply(const Box& b) const {
    return {b.x * scale + pad_x, b.y * scale + pad_y, b.w * scale, b.h * scale};
}

Box LetterboxTransform::invert(const Box& b) const {
    return {(b.x - pad_x) / scale, (b.y - pad_y) / scale, b.w / scale, b.h / scale};
}

cv::Mat letterbox_image(const cv::Mat& rgb, int target, LetterboxTransform* tf_out) {
    LetterboxTransform tf;
    tf.target = target;
    tf.orig_w = rgb.cols;
    tf.orig_h = rgb.rows;
    const int longer = std::max(rgb.cols, rgb.rows);
    tf.scale = static_cast<double>(target) / longer;
    const int new_w = rgb.cols == longer ? target : static_cast<int>(std::lround(rgb.cols * tf.scale));
    const int new_h = rgb.rows == longer ? target : static_cast<int>(std::lround(rgb.rows * tf.scale));
    tf.pad_x = (target - new_w) / 2;
    tf.pad_y = (target - new_h) / 2;

    cv::Mat resized;
    cv::resize(rgb, resized, cv::Size(new_w, new_h), 0, 0, cv::INTER_LINEAR);
    const cv::Scalar mean = cv::mean(rgb);
    cv::Mat out(target, target, CV_8UC3,
                cv::Scalar(std::lround(mean[0]), std::lround(mean[1]), std::lround(mean[2])));
    resized.copyTo(out(cv::Rect(static_cast<int>(tf.pad_x), static_cast<int>(tf.pad_y), new_w, new_h)));
    if (tf_out) *tf_out = tf;
    return out;
}

LetterboxedSample letterbox(const Sample& s, int target) {
    LetterboxedSample out;
    out.image = letterbox_image(s.image, target, &out.tf);
    out.gt = out.tf.apply(s.gt);
    out.query = s.query;
    out.id = s.id;
    return out;
}

std::string swap_left_right(const std::string& query) {
    std::istringstream in(query);
    std::ostringstream out;
    std::string word;
    bool first = true;
    while (in >> word) {
        std::string lower = word;
        std::transform(lower.begin(), lower.end(), lower.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (lower == "left")
            word = "right";
        else if (lower == "right")
            word = "left";
        if (!first) out << ' ';
        out << word;
        first = false;
    }
    return out.str();
}

LetterboxedSample flip_horizontal(const LetterboxedSample& s) {
    LetterboxedSample out = s;
    cv::flip(s.image, out.image, 1);
    out.gt.x = s.image.cols - s.gt.x - s.gt.w;
    out.query = swap_left_right(s.query);
    return out;
}

cv::Mat hsv_jitter(const cv::Mat& rgb, double sat_scale, double val_scale) {
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
    cv::Mat hsv;
    cv::cvtColor(f, hsv, cv::COLOR_RGB2HSV);
    for (int y = 0; y < hsv.rows; ++y) {
        cv::Vec3f* row = hsv.ptr<cv::Vec3f>(y);
        for (int x = 0; x < hsv.cols; ++x) {
            row[x][1] = std::min(1.0f, static_cast<float>(row[x][1] * sat_scale));
            row[x][2] = std::min(1.0f, static_cast<float>(row[x][2] * val_scale));
        }
    }
    cv::Mat back;
    cv::cvtColor(hsv, back, cv::COLOR_HSV2RGB);
    cv::Mat out;
    back.convertTo(out, CV_8UC3, 255.0);
    return out;
}

LetterboxedSample random_affine(const LetterboxedSample& s, std::mt19937_64& rng) {
    const int W = s.image.cols, H = s.image.rows;
    const double cx = W / 2.0, cy = H / 2.0;
    for (;;) {
        const double sc = urand(rng, 0.9, 1.1);
        const double tx = urand(rng, -0.1, 0.1) * W;
        const double ty = urand(rng, -0.1, 0.1) * H;
        // scale about the canvas center plus translation
        const double ox = tx + (1.0 - sc) * cx;
        const double oy = ty + (1.0 - sc) * cy;
        Box b{s.gt.x * sc + ox, s.gt.y * sc + oy, s.gt.w * sc, s.gt.h * sc};
        b = b.clipped(W, H);
        if (b.w < 4.0 || b.h < 4.0) continue;  // re-draw the affine parameters

        const cv::Scalar mean = cv::mean(s.image);
        cv::Mat M = (cv::Mat_<double>(2, 3) << sc, 0, ox, 0, sc, oy);
        LetterboxedSample out = s;
        cv::warpAffine(s.image, out.image, M, s.image.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT,
                       mean);
        out.gt = b;
        return out;
    }
}

LetterboxedSample augment(const LetterboxedSample& s, std::mt19937_64& rng) {
    LetterboxedSample out = s;
    if (urand(rng, 0.0, 1.0) < 0.5) out = flip_horizontal(out);
    const double sat = urand(rng, 0.8, 1.2);
    const double val = urand(rng, 0.8, 1.2);
    out.image = hsv_jitter(out.image, sat, val);
    return random_affine(out, rng);
}

Tensor to_input_tensor(const cv::Mat& rgb) {
    const int H = rgb.rows, W = rgb.cols;
    Tensor t({3, H, W});
    for (int y = 0; y < H; ++y) {
        const cv::Vec3b* row = rgb.ptr<cv::Vec3b>(y);
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) t.at(c, y, x) = row[x][c] / 255.0;
    }
    return t;
}

}  // namespace vg::data
