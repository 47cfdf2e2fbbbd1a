// Command-line front end: training, evaluation, single-image prediction,
// attention-map visualization and synthetic-corpus generation.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "vg/train_eval.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;  // usage / config errors
constexpr int kExitData = 2;   // missing or malformed inputs
constexpr int kExitRuntime = 3;

std::vector<vg::data::Sample> load_samples(const std::string& manifest) {
    auto report = vg::data::load_manifest(manifest);
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    for (const auto& e : report.errors) std::cerr << "error: " << e << "\n";
    if (report.samples.empty())
        throw vg::data::DataError("no usable records in manifest: " + manifest);
    return report.samples;
}

cv::Mat read_rgb(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw vg::data::DataError("cannot read image: " + path);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return rgb;
}

void write_rgb(const std::string& path, const cv::Mat& rgb) {
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path, bgr)) throw vg::data::DataError("cannot write image: " + path);
}

struct Prediction {
    vg::Box box;           // original pixel frame
    double confidence = 0;
    std::array<vg::Tensor, 3> beta;  // per-resolution attention values
    vg::data::LetterboxTransform tf;
    cv::Mat letterboxed;
};

Prediction predict_one(vg::GroundingModel& model, const vg::text::Vocabulary& vocab,
                       const cv::Mat& rgb, const std::string& query) {
    const int S = model.config().backbone.input_size;
    vg::data::Sample s;
    s.image = rgb;
    s.query = query;
    s.gt = {0, 0, 1, 1};
    auto lb = vg::data::letterbox(s, S);
    vg::Tensor img = vg::data::to_input_tensor(lb.image);
    vg::Tensor batch({1, 3, S, S});
    std::copy_n(img.data(), img.numel(), batch.data());
    vg::text::TokenizedQuery q = vg::text::tokenize(query);
    vocab.encode(q, model.config().max_query_len);
    auto fwd = model.forward(batch, {q.ids}, false);
    auto pred = model.predictions(fwd.samples[0]);
    Prediction out;
    out.box = lb.tf.invert(vg::fusion::select_box(pred)).clipped(rgb.cols, rgb.rows);
    out.confidence = pred.confidence[vg::fusion::argmax_confidence(pred)];
    for (int k = 0; k < 3; ++k)
        out.beta[static_cast<size_t>(k)] = fwd.samples[0].xmodal[static_cast<size_t>(k)].beta->value;
    out.tf = lb.tf;
    out.letterboxed = lb.image;
    return out;
}

int cmd_train(const std::string& config_path, const std::string& resume) {
    vg::RunConfig cfg = vg::parse_config_file(config_path);
    if (cfg.train_manifest.empty())
        throw vg::ConfigError("missing required key 'train_manifest' in " + config_path);
    if (cfg.out_dir.empty())
        throw vg::ConfigError("missing required key 'out_dir' in " + config_path);
    auto train_set = load_samples(cfg.train_manifest);
    std::vector<vg::data::Sample> val_set;
    if (!cfg.val_manifest.empty()) val_set = load_samples(cfg.val_manifest);

    auto outcome = vg::train::train(cfg, train_set, val_set, cfg.out_dir, &std::cout, resume);
    std::cout << "steps: " << outcome.steps << "\n";
    if (!val_set.empty()) std::cout << "best val AP50: " << outcome.best_ap50 << "\n";
    std::cout << "checkpoint: " << outcome.best_checkpoint << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest) {
    auto restored = vg::train::restore_model(vg::train::load_checkpoint(ckpt_path));
    auto samples = load_samples(manifest);
    auto report = vg::train::evaluate(*restored.model, restored.vocab, samples);
    std::cout << "AP50: " << report.ap50 << "\n";
    std::cout << "mean inference ms: " << report.mean_inference_ms << "\n";
    std::cout << "params: " << report.param_count << "\n";
    const std::string records_path = "eval_records.jsonl";
    std::ofstream records(records_path);
    for (const auto& rec : report.records) {
        json j;
        j["id"] = rec.id;
        j["box"] = {rec.predicted.x, rec.predicted.y, rec.predicted.w, rec.predicted.h};
        j["iou"] = rec.iou;
        j["confidence"] = rec.confidence;
        records << j.dump() << "\n";
    }
    std::cout << "records: " << records_path << "\n";
    return kExitOk;
}

int cmd_predict(const std::string& ckpt_path, const std::string& image_path,
                const std::string& query, const std::string& overlay) {
    if (query.find_first_not_of(" \t") == std::string::npos)
        throw vg::ConfigError("--query must not be empty");
    auto restored = vg::train::restore_model(vg::train::load_checkpoint(ckpt_path));
    cv::Mat rgb = read_rgb(image_path);
    auto pred = predict_one(*restored.model, restored.vocab, rgb, query);
    json j;
    j["box"] = {pred.box.x, pred.box.y, pred.box.w, pred.box.h};
    j["confidence"] = pred.confidence;
    std::cout << j.dump() << "\n";
    if (!overlay.empty()) {
        cv::Mat canvas = rgb.clone();
        cv::rectangle(canvas,
                      cv::Rect2d(pred.box.x, pred.box.y, pred.box.w, pred.box.h),
                      cv::Scalar(255, 0, 0), 2);  // predicted box in red
        write_rgb(overlay, canvas);
    }
    return kExitOk;
}

cv::Mat beta_to_gray(const vg::Tensor& beta, int h, int w, int upsample_to) {
    double lo = beta[0], hi = beta[0];
    for (std::int64_t i = 0; i < beta.numel(); ++i) {
        lo = std::min(lo, beta[i]);
        hi = std::max(hi, beta[i]);
    }
    cv::Mat gray(h, w, CV_8UC1);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double v = beta[r * w + c];
            // constant maps normalize to mid-gray
            const double norm = hi > lo ? (v - lo) / (hi - lo) : 0.5;
            gray.at<uchar>(r, c) = static_cast<uchar>(std::lround(norm * 255.0));
        }
    cv::Mat big;
    cv::resize(gray, big, cv::Size(upsample_to, upsample_to), 0, 0, cv::INTER_NEAREST);
    return big;
}

int cmd_visualize(const std::string& ckpt_path, const std::string& image_path,
                  const std::string& query, const std::string& out_dir) {
    if (query.find_first_not_of(" \t") == std::string::npos)
        throw vg::ConfigError("--query must not be empty");
    auto restored = vg::train::restore_model(vg::train::load_checkpoint(ckpt_path));
    cv::Mat rgb = read_rgb(image_path);
    auto pred = predict_one(*restored.model, restored.vocab, rgb, query);

    fs::create_directories(out_dir);
    const int S = restored.model->config().backbone.input_size;
    cv::Mat sum32f(S, S, CV_32FC1, cv::Scalar(0));
    const std::array<int, 3> strides = {32, 16, 8};
    for (int k = 0; k < 3; ++k) {
        const auto& spec = restored.model->layout().specs()[k];
        cv::Mat gray = beta_to_gray(pred.beta[static_cast<size_t>(k)], spec.h, spec.w, S);
        const std::string path =
            (fs::path(out_dir) / ("attn_s" + std::to_string(strides[static_cast<size_t>(k)]) + ".png")).string();
        if (!cv::imwrite(path, gray)) throw vg::data::DataError("cannot write " + path);
        cv::Mat f;
        gray.convertTo(f, CV_32FC1, 1.0 / (3 * 255.0));
        sum32f += f;
    }
    // composite: red-tinted mean attention over the letterboxed image
    cv::Mat composite = pred.letterboxed.clone();
    for (int y = 0; y < S; ++y) {
        cv::Vec3b* row = composite.ptr<cv::Vec3b>(y);
        const float* a = sum32f.ptr<float>(y);
        for (int x = 0; x < S; ++x) {
            const double alpha = 0.6 * a[x];
            row[x][0] = static_cast<uchar>(std::min(255.0, row[x][0] * (1 - alpha) + 255 * alpha));
            row[x][1] = static_cast<uchar>(row[x][1] * (1 - alpha));
            row[x][2] = static_cast<uchar>(row[x][2] * (1 - alpha));
        }
    }
    write_rgb((fs::path(out_dir) / "composite.png").string(), composite);
    std::cout << "wrote 3 attention maps + composite to " << out_dir << "\n";
    return kExitOk;
}

int cmd_gen_data(std::uint64_t seed, int count, const std::string& out_dir) {
    if (count < 1) throw vg::ConfigError("--count must be >= 1");
    auto samples = vg::data::generate_synthetic(seed, count);
    vg::data::save_corpus(samples, out_dir);
    std::cout << "wrote " << samples.size() << " samples to " << out_dir << "/manifest.jsonl\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"single-query visual grounding: train, evaluate, predict, visualize"};
    app.require_subcommand(1);

    std::string config_path, resume, ckpt, manifest, image_path, query, overlay, out_dir;
    std::uint64_t seed = 1;
    int count = 0;

    auto* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", config_path, "key = value config file")->required();
    train->add_option("--resume", resume, "checkpoint to continue from");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    eval->add_option("--data", manifest, "dataset manifest")->required();

    auto* predict = app.add_subcommand("predict", "localize a query in one image");
    predict->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    predict->add_option("--image", image_path, "input image")->required();
    predict->add_option("--query", query, "natural-language query")->required();
    predict->add_option("--overlay", overlay, "write an overlay image here");

    auto* viz = app.add_subcommand("visualize-attn", "dump per-resolution attention maps");
    viz->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    viz->add_option("--image", image_path, "input image")->required();
    viz->add_option("--query", query, "natural-language query")->required();
    viz->add_option("--out", out_dir, "output directory")->required();

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic grounding corpus");
    gen->add_option("--seed", seed, "corpus seed")->required();
    gen->add_option("--count", count, "number of samples")->required();
    gen->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
        if (*train) return cmd_train(config_path, resume);
        if (*eval) return cmd_eval(ckpt, manifest);
        if (*predict) return cmd_predict(ckpt, image_path, query, overlay);
        if (*viz) return cmd_visualize(ckpt, image_path, query, out_dir);
        if (*gen) return cmd_gen_data(seed, count, out_dir);
        return kExitUsage;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << e.what() << "\n";
        return kExitUsage;
    } catch (const vg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const vg::text::InvalidQueryError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const vg::data::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const vg::train::CheckpointError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
