#include "vg/cli_config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace vg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Key {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

long long parse_int(const std::string& key, const std::string& v) {
    size_t pos = 0;
    long long out;
    try {
        out = std::stoll(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    size_t pos = 0;
    double out;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("key '" + key + "': expected a boolean (0/1/true/false), got '" + v + "'");
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

// Declaration order fixes the canonical serialization order.
const std::vector<std::pair<std::string, Key>>& key_table() {
    static const std::vector<std::pair<std::string, Key>> table = {
        {"preset",
         {[](RunConfig& c, const std::string& v) {
              if (v != "tiny" && v != "darknet53")
                  throw ConfigError("key 'preset': expected tiny or darknet53, got '" + v + "'");
              c.preset = v;
          },
          [](const RunConfig& c) { return c.preset; }}},
        {"input_size",
         {[](RunConfig& c, const std::string& v) { c.input_size = static_cast<int>(parse_int("input_size", v)); },
          [](const RunConfig& c) { return std::to_string(c.input_size); }}},
        {"d_model",
         {[](RunConfig& c, const std::string& v) { c.d_model = static_cast<int>(parse_int("d_model", v)); },
          [](const RunConfig& c) { return std::to_string(c.d_model); }}},
        {"d_fused",
         {[](RunConfig& c, const std::string& v) { c.d_fused = static_cast<int>(parse_int("d_fused", v)); },
          [](const RunConfig& c) { return std::to_string(c.d_fused); }}},
        {"lstm_hidden",
         {[](RunConfig& c, const std::string& v) { c.lstm_hidden = static_cast<int>(parse_int("lstm_hidden", v)); },
          [](const RunConfig& c) { return std::to_string(c.lstm_hidden); }}},
        {"embed_dim",
         {[](RunConfig& c, const std::string& v) { c.embed_dim = static_cast<int>(parse_int("embed_dim", v)); },
          [](const RunConfig& c) { return std::to_string(c.embed_dim); }}},
        {"max_query_len",
         {[](RunConfig& c, const std::string& v) { c.max_query_len = static_cast<int>(parse_int("max_query_len", v)); },
          [](const RunConfig& c) { return std::to_string(c.max_query_len); }}},
        {"width_mult",
         {[](RunConfig& c, const std::string& v) { c.width_mult = parse_double("width_mult", v); },
          [](const RunConfig& c) { return fmt_double(c.width_mult); }}},
        {"base_lr",
         {[](RunConfig& c, const std::string& v) { c.base_lr = parse_double("base_lr", v); },
          [](const RunConfig& c) { return fmt_double(c.base_lr); }}},
        {"backbone_lr_scale",
         {[](RunConfig& c, const std::string& v) { c.backbone_lr_scale = parse_double("backbone_lr_scale", v); },
          [](const RunConfig& c) { return fmt_double(c.backbone_lr_scale); }}},
        {"batch_size",
         {[](RunConfig& c, const std::string& v) { c.batch_size = static_cast<int>(parse_int("batch_size", v)); },
          [](const RunConfig& c) { return std::to_string(c.batch_size); }}},
        {"epochs",
         {[](RunConfig& c, const std::string& v) { c.epochs = static_cast<int>(parse_int("epochs", v)); },
          [](const RunConfig& c) { return std::to_string(c.epochs); }}},
        {"lambda_mask",
         {[](RunConfig& c, const std::string& v) { c.lambda_mask = parse_double("lambda_mask", v); },
          [](const RunConfig& c) { return fmt_double(c.lambda_mask); }}},
        {"seed",
         {[](RunConfig& c, const std::string& v) { c.seed = static_cast<std::uint64_t>(parse_int("seed", v)); },
          [](const RunConfig& c) { return std::to_string(c.seed); }}},
        {"augment",
         {[](RunConfig& c, const std::string& v) { c.augment = parse_bool("augment", v); },
          [](const RunConfig& c) { return std::string(c.augment ? "1" : "0"); }}},
        {"freeze_embeddings",
         {[](RunConfig& c, const std::string& v) { c.freeze_embeddings = parse_bool("freeze_embeddings", v); },
          [](const RunConfig& c) { return std::string(c.freeze_embeddings ? "1" : "0"); }}},
        {"train_manifest",
         {[](RunConfig& c, const std::string& v) { c.train_manifest = v; },
          [](const RunConfig& c) { return c.train_manifest; }}},
        {"val_manifest",
         {[](RunConfig& c, const std::string& v) { c.val_manifest = v; },
          [](const RunConfig& c) { return c.val_manifest; }}},
        {"out_dir",
         {[](RunConfig& c, const std::string& v) { c.out_dir = v; },
          [](const RunConfig& c) { return c.out_dir; }}},
        {"glove_path",
         {[](RunConfig& c, const std::string& v) { c.glove_path = v; },
          [](const RunConfig& c) { return c.glove_path; }}},
    };
    return table;
}

void validate(const RunConfig& c) {
    if (c.input_size <= 0 || c.input_size % 32 != 0)
        throw ConfigError("input_size must be a positive multiple of 32");
    if (c.d_model <= 0 || c.d_fused <= 0 || c.lstm_hidden <= 0 || c.embed_dim <= 0)
        throw ConfigError("model dimensions must be positive");
    if (c.base_lr <= 0 || c.backbone_lr_scale <= 0) throw ConfigError("learning rates must be positive");
    if (c.batch_size <= 0 || c.epochs < 0) throw ConfigError("batch_size must be positive, epochs >= 0");
    if (c.lambda_mask < 0) throw ConfigError("lambda_mask must be >= 0");
    if (c.max_query_len <= 0) throw ConfigError("max_query_len must be positive");
}

}  // namespace

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.backbone.preset = preset;
    m.backbone.input_size = input_size;
    m.backbone.width_mult = width_mult;
    m.d_model = d_model;
    m.d_fused = d_fused;
    m.lstm_hidden = lstm_hidden;
    m.embed_dim = embed_dim;
    m.max_query_len = max_query_len;
    m.seed = seed;
    return m;
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        bool found = false;
        for (const auto& [name, handlers] : key_table()) {
            if (name == key) {
                handlers.set(cfg, value);
                found = true;
                break;
            }
        }
        if (!found) throw ConfigError("unknown config key '" + key + "'");
    }
    validate(cfg);
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string config_to_text(const RunConfig& cfg) {
    std::ostringstream os;
    for (const auto& [name, handlers] : key_table()) os << name << " = " << handlers.get(cfg) << "\n";
    return os.str();
}

}  // namespace vg
