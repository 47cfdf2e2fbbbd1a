#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "vg/data.hpp"
#include "vg/train_eval.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string grounder_bin() {
    const char* bin = std::getenv("GROUNDER_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "GROUNDER_BIN must point at the grounder binary");
    return bin;
}

struct Result {
    int exit_code;
    std::string out;
};

Result run(const std::string& args) {
    const std::string out_file = "/tmp/vg_cli_out_" + std::to_string(::getpid()) + ".txt";
    const std::string cmd = grounder_bin() + " " + args + " > " + out_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(out_file);
    std::ostringstream os;
    os << in.rdbuf();
    fs::remove(out_file);
    return {WEXITSTATUS(status), os.str()};
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct Workspace {
    fs::path root;
    Workspace() {
        root = fs::temp_directory_path() / ("vg_cli_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Workspace() { fs::remove_all(root); }
};

Workspace& ws() {
    static Workspace w;
    return w;
}

// a trained checkpoint shared by the predict/visualize cases
std::string shared_checkpoint() {
    static std::string path;
    if (!path.empty()) return path;
    const fs::path dir = ws().root / "shared_run";
    auto r1 = run("gen-data --seed 5 --count 12 --out " + (ws().root / "shared_data").string());
    REQUIRE(r1.exit_code == 0);
    std::ofstream cfg(ws().root / "shared.cfg");
    cfg << "preset = tiny\ninput_size = 96\nd_model = 16\nd_fused = 16\nlstm_hidden = 8\n"
        << "embed_dim = 8\nbatch_size = 4\nepochs = 1\nbase_lr = 1e-3\nbackbone_lr_scale = 1.0\n"
        << "augment = 0\nseed = 2\n"
        << "train_manifest = " << (ws().root / "shared_data" / "manifest.jsonl").string() << "\n"
        << "val_manifest = " << (ws().root / "shared_data" / "manifest.jsonl").string() << "\n"
        << "out_dir = " << dir.string() << "\n";
    cfg.close();
    auto r2 = run("train --config " + (ws().root / "shared.cfg").string());
    REQUIRE_MESSAGE(r2.exit_code == 0, r2.out);
    path = (dir / "checkpoint_best.vgck").string();
    REQUIRE(fs::exists(path));
    return path;
}

}  // namespace

TEST_CASE("gen-data is deterministic and loads back cleanly") {
    auto a = run("gen-data --seed 9 --count 5 --out " + (ws().root / "gen_a").string());
    auto b = run("gen-data --seed 9 --count 5 --out " + (ws().root / "gen_b").string());
    CHECK(a.exit_code == 0);
    CHECK(b.exit_code == 0);
    CHECK(file_bytes(ws().root / "gen_a" / "manifest.jsonl") ==
          file_bytes(ws().root / "gen_b" / "manifest.jsonl"));
    // image bytes identical as well
    CHECK(file_bytes(ws().root / "gen_a" / "images" / "syn-000000.png") ==
          file_bytes(ws().root / "gen_b" / "images" / "syn-000000.png"));

    auto report = vg::data::load_manifest((ws().root / "gen_a" / "manifest.jsonl").string());
    CHECK(report.errors.empty());
    CHECK(report.samples.size() == 5);

    CHECK(run("gen-data --seed 9 --count 0 --out " + (ws().root / "gen_zero").string()).exit_code == 1);
}

TEST_CASE("train surfaces config errors with the key name") {
    std::ofstream cfg(ws().root / "bad.cfg");
    cfg << "preset = tiny\nout_dir = " << (ws().root / "bad_run").string() << "\n";
    cfg.close();
    auto r = run("train --config " + (ws().root / "bad.cfg").string());
    CHECK(r.exit_code == 1);
    CHECK(r.out.find("train_manifest") != std::string::npos);
    CHECK(!fs::exists(ws().root / "bad_run"));  // no partial artifacts

    std::ofstream unk(ws().root / "unk.cfg");
    unk << "not_a_key = 1\n";
    unk.close();
    auto r2 = run("train --config " + (ws().root / "unk.cfg").string());
    CHECK(r2.exit_code == 1);
    CHECK(r2.out.find("not_a_key") != std::string::npos);

    CHECK(run("train --config /nonexistent/nope.cfg").exit_code == 1);
}

TEST_CASE("train writes a checkpoint and resume continues the counter") {
    const std::string ckpt = shared_checkpoint();
    CHECK(fs::exists(ckpt));
    auto before = vg::train::load_checkpoint(
        (ws().root / "shared_run" / "checkpoint_last.vgck").string());
    CHECK(before.step == 3);  // 12 samples / batch 4 * 1 epoch

    auto r = run("train --config " + (ws().root / "shared.cfg").string() + " --resume " +
                 (ws().root / "shared_run" / "checkpoint_last.vgck").string());
    CHECK(r.exit_code == 0);
    auto after = vg::train::load_checkpoint(
        (ws().root / "shared_run" / "checkpoint_last.vgck").string());
    CHECK(after.step == 6);  // monotone across the resumed run
}

TEST_CASE("eval prints the three metrics and is repeatable") {
    const std::string ckpt = shared_checkpoint();
    const std::string manifest = (ws().root / "shared_data" / "manifest.jsonl").string();
    auto r1 = run("eval --checkpoint " + ckpt + " --data " + manifest);
    CHECK(r1.exit_code == 0);
    CHECK(r1.out.find("AP50") != std::string::npos);
    CHECK(r1.out.find("ms") != std::string::npos);
    CHECK(r1.out.find("params") != std::string::npos);
    auto first_line = r1.out.substr(0, r1.out.find('\n'));
    auto r2 = run("eval --checkpoint " + ckpt + " --data " + manifest);
    CHECK(r2.out.substr(0, r2.out.find('\n')) == first_line);  // same AP50

    CHECK(run("eval --checkpoint /nonexistent.vgck --data " + manifest).exit_code == 2);
    CHECK(run("eval --checkpoint " + ckpt + " --data /nonexistent.jsonl").exit_code == 2);
}

TEST_CASE("predict prints a valid box and writes overlays") {
    const std::string ckpt = shared_checkpoint();
    const std::string image = (ws().root / "shared_data" / "images" / "syn-000000.png").string();
    const std::string overlay = (ws().root / "overlay.png").string();
    auto r = run("predict --checkpoint " + ckpt + " --image " + image +
                 " --query \"the red circle\" --overlay " + overlay);
    REQUIRE_MESSAGE(r.exit_code == 0, r.out);
    json j = json::parse(r.out.substr(0, r.out.find('\n')));
    const double x = j["box"][0], y = j["box"][1], w = j["box"][2], h = j["box"][3];
    CHECK(x >= 0.0);
    CHECK(y >= 0.0);
    CHECK(w >= 0.0);
    CHECK(h >= 0.0);
    CHECK(x + w <= 416.0);
    CHECK(y + h <= 416.0);
    CHECK(j["confidence"].get<double>() > 0.0);
    CHECK(!cv::imread(overlay).empty());

    CHECK(run("predict --checkpoint " + ckpt + " --image " + image + " --query \"\"").exit_code == 1);
    CHECK(run("predict --checkpoint " + ckpt + " --image /nonexistent.png --query \"x\"").exit_code == 2);
}

TEST_CASE("visualize-attn writes three maps plus a composite") {
    const std::string ckpt = shared_checkpoint();
    const std::string image = (ws().root / "shared_data" / "images" / "syn-000001.png").string();
    const fs::path out = ws().root / "attn";
    auto r = run("visualize-attn --checkpoint " + ckpt + " --image " + image +
                 " --query \"the red circle\" --out " + out.string());
    REQUIRE_MESSAGE(r.exit_code == 0, r.out);
    int files = 0;
    for (auto& entry : fs::directory_iterator(out)) {
        (void)entry;
        ++files;
    }
    CHECK(files == 4);
    for (const char* name : {"attn_s32.png", "attn_s16.png", "attn_s8.png", "composite.png"}) {
        cv::Mat img = cv::imread((out / name).string(), cv::IMREAD_UNCHANGED);
        CHECK(!img.empty());
    }
    // min-max normalization spans the full range for a non-constant map
    cv::Mat m8 = cv::imread((out / "attn_s8.png").string(), cv::IMREAD_GRAYSCALE);
    double lo, hi;
    cv::minMaxLoc(m8, &lo, &hi);
    CHECK(lo == 0.0);
    CHECK(hi == 255.0);
}

TEST_CASE("usage errors exit with code 1") {
    CHECK(run("").exit_code == 1);
    CHECK(run("unknown-subcommand").exit_code == 1);
    CHECK(run("train").exit_code == 1);  // missing --config
}
