#pragma once

#include <string>

#include "vg/model.hpp"

namespace vg {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Flat key = value run configuration. Every key has a default except the
// data paths. Unknown keys are rejected.
struct RunConfig {
    // model
    std::string preset = "tiny";  // tiny | darknet53
    int input_size = 416;
    int d_model = 256;
    int d_fused = 256;
    int lstm_hidden = 128;
    int embed_dim = 300;
    int max_query_len = 40;
    double width_mult = 1.0;
    // optimization
    double base_lr = 1e-4;
    double backbone_lr_scale = 0.1;
    int batch_size = 14;
    int epochs = 10;
    double lambda_mask = 0.1;
    std::uint64_t seed = 1;
    bool augment = true;
    bool freeze_embeddings = false;
    // paths (no defaults)
    std::string train_manifest;
    std::string val_manifest;
    std::string out_dir;
    std::string glove_path;

    ModelConfig model_config() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

// Canonical serialization: fixed key order, parse(config_to_text(c)) == c.
std::string config_to_text(const RunConfig& cfg);

}  // namespace vg
