#pragma once

#include <opencv2/core.hpp>

#include <random>
#include <string>
#include <vector>

#include "vg/geometry.hpp"
#include "vg/tensor.hpp"

namespace vg::data {

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// One (image, query, ground-truth box) record. Images are 8-bit RGB.
struct Sample {
    cv::Mat image;  // CV_8UC3, RGB channel order
    std::string query;
    Box gt;  // pixels, original frame
    std::string id;
};

// ---- synthetic corpus ----

enum class ShapeType { circle, square, triangle };

struct PlacedShape {
    ShapeType type;
    int color;       // palette index
    double cx, cy;   // center, pixels
    double size;     // bounding-box side, pixels
    Box bbox() const { return {cx - size / 2, cy - size / 2, size, size}; }
};

struct SceneSpec {
    int canvas = 416;
    std::vector<PlacedShape> shapes;
    int target = 0;
    std::string query;
};

extern const std::vector<std::string> kColorNames;  // 8-color palette
extern const std::vector<cv::Vec3b> kColorValues;   // RGB
extern const std::vector<std::string> kShapeNames;
extern const std::vector<std::string> kOrdinalNames;

struct SyntheticSample {
    SceneSpec scene;
    Sample sample;
};

// Deterministic per seed. Queries follow the grammar
//   "the <color> <shape>"
//   "the <color> <shape> <rel> the <color> <shape>", rel in {left of,
//     right of, above, below}
//   "the <ordinal> <shape> from the left"
// and are unique by construction (rejection sampling).
std::vector<SyntheticSample> generate_synthetic_scenes(std::uint64_t seed, int count,
                                                       int canvas = 416);
std::vector<Sample> generate_synthetic(std::uint64_t seed, int count, int canvas = 416);

// ---- manifest I/O ----

struct LoadReport {
    std::vector<Sample> samples;
    std::vector<std::string> errors;    // rejected records
    std::vector<std::string> warnings;  // e.g. clipped boxes
};

// Line-delimited JSON records {id, image_path, query, box:[x,y,w,h]};
// image paths resolve relative to the manifest location.
LoadReport load_manifest(const std::string& path);

// Writes images/<id>.png plus manifest.jsonl under out_dir.
void save_corpus(const std::vector<Sample>& samples, const std::string& out_dir);

// ---- preprocessing ----

struct LetterboxTransform {
    double scale = 1.0;
    double pad_x = 0, pad_y = 0;
    int target = 416;
    int orig_w = 0, orig_h = 0;

    Box apply(const Box& b) const;
    Box invert(const Box& b) const;
};

struct LetterboxedSample {
    cv::Mat image;  // target x target RGB
    Box gt;         // transformed
    std::string query;
    std::string id;
    LetterboxTransform tf;
};

// Aspect-preserving resize of the longer edge to `target`, padding with the
// per-channel mean pixel value.
LetterboxedSample letterbox(const Sample& s, int target = 416);
cv::Mat letterbox_image(const cv::Mat& rgb, int target, LetterboxTransform* tf_out);

// Horizontal flip (p=0.5, with left/right words swapped), HSV
// saturation/intensity jitter in [0.8, 1.2], and a random affine
// (translation within +-10%, scale in [0.9, 1.1]). Boxes that would drop
// below 4x4 px cause the affine draw to be repeated.
LetterboxedSample augment(const LetterboxedSample& s, std::mt19937_64& rng);

// augment() building blocks.
LetterboxedSample flip_horizontal(const LetterboxedSample& s);
std::string swap_left_right(const std::string& query);
cv::Mat hsv_jitter(const cv::Mat& rgb, double sat_scale, double val_scale);
LetterboxedSample random_affine(const LetterboxedSample& s, std::mt19937_64& rng);

// [3,S,S] tensor with values in [0,1] (divide by 255).
Tensor to_input_tensor(const cv::Mat& rgb);

}  // namespace vg::data
