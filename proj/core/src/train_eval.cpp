#include "vg/train_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "vg/verification.hpp"

namespace fs = std::filesystem;

namespace vg::train {

namespace {

constexpr char kMagic[8] = {'V', 'G', 'C', 'K', 'P', 'T', '0', '1'};

// ---- little-endian binary stream helpers ----

struct Writer {
    std::ostream& out;
    void raw(const void* p, size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void i64(std::int64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void tensor(const Tensor& t) {
        u32(static_cast<std::uint32_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) u32(static_cast<std::uint32_t>(t.dim(i)));
        raw(t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
    }
};

struct Reader {
    std::istream& in;
    void raw(void* p, size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in.gcount() != static_cast<std::streamsize>(n))
            throw CheckpointError("corrupt checkpoint: unexpected end of file");
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, 4);
        return v;
    }
    std::int64_t i64() {
        std::int64_t v;
        raw(&v, 8);
        return v;
    }
    double f64() {
        double v;
        raw(&v, 8);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        if (n > (1u << 24)) throw CheckpointError("corrupt checkpoint: oversized string");
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    Tensor tensor() {
        const std::uint32_t nd = u32();
        if (nd > 8) throw CheckpointError("corrupt checkpoint: bad tensor rank");
        std::vector<int> shape(nd);
        std::int64_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<int>(u32());
            numel *= d;
        }
        if (numel < 0 || numel > (1ll << 31)) throw CheckpointError("corrupt checkpoint: bad tensor size");
        Tensor t(shape);
        raw(t.data(), static_cast<size_t>(numel) * sizeof(double));
        return t;
    }
};

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::string loss_json(const losses::LossBreakdown& b, std::int64_t step, double lr) {
    std::ostringstream os;
    os.precision(9);
    os << "{\"step\":" << step << ",\"lr\":" << lr << ",\"l_mask\":[" << b.mask_k[0] << ","
       << b.mask_k[1] << "," << b.mask_k[2] << "],\"l_mask_total\":" << b.mask_total
       << ",\"l_conf\":" << b.confidence << ",\"l_box\":" << b.box << ",\"total\":" << b.total << "}";
    return os.str();
}

struct StructureKeys {
    std::string preset;
    int input_size, d_model, d_fused, lstm_hidden, embed_dim, max_query_len;
    double width_mult;

    static StructureKeys of(const RunConfig& c) {
        return {c.preset, c.input_size, c.d_model, c.d_fused, c.lstm_hidden, c.embed_dim,
                c.max_query_len, c.width_mult};
    }
    bool operator==(const StructureKeys&) const = default;
};

}  // namespace

Checkpoint snapshot(const GroundingModel& model, const text::Vocabulary& vocab,
                    const nn::Adam* adam, const RunConfig& cfg, std::int64_t step,
                    double best_ap50) {
    Checkpoint ck;
    ck.config_text = config_to_text(cfg);
    ck.vocab_words = vocab.words();
    for (const auto& p : model.registry().params()) ck.params.emplace_back(p.name, p.var->value);
    for (const auto& b : model.registry().buffers()) ck.buffers.emplace_back(b.name, *b.tensor);
    if (adam) {
        ck.adam_steps = adam->steps_taken();
        // registry order keeps the file canonical
        auto& slots = const_cast<nn::Adam*>(adam)->slots();
        for (const auto& p : model.registry().params()) {
            auto it = slots.find(p.name);
            if (it != slots.end()) ck.adam_slots.push_back({p.name, it->second.m, it->second.v});
        }
    }
    ck.step = step;
    ck.best_ap50 = best_ap50;
    return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint: " + path);
    Writer w{out};
    w.raw(kMagic, 8);
    w.i64(ckpt.step);
    w.f64(ckpt.best_ap50);
    w.str(ckpt.config_text);
    w.u32(static_cast<std::uint32_t>(ckpt.vocab_words.size()));
    for (const auto& word : ckpt.vocab_words) w.str(word);
    w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& [name, t] : ckpt.params) {
        w.str(name);
        w.tensor(t);
    }
    w.u32(static_cast<std::uint32_t>(ckpt.buffers.size()));
    for (const auto& [name, t] : ckpt.buffers) {
        w.str(name);
        w.tensor(t);
    }
    w.u32(static_cast<std::uint32_t>(ckpt.adam_slots.size()));
    w.i64(ckpt.adam_steps);
    for (const auto& slot : ckpt.adam_slots) {
        w.str(slot.name);
        w.tensor(slot.m);
        w.tensor(slot.v);
    }
    if (!out) throw CheckpointError("write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
        throw CheckpointError("not a checkpoint or unsupported version: " + path);
    Reader r{in};
    Checkpoint ck;
    ck.step = r.i64();
    ck.best_ap50 = r.f64();
    ck.config_text = r.str();
    const std::uint32_t nwords = r.u32();
    ck.vocab_words.reserve(nwords);
    for (std::uint32_t i = 0; i < nwords; ++i) ck.vocab_words.push_back(r.str());
    const std::uint32_t nparams = r.u32();
    for (std::uint32_t i = 0; i < nparams; ++i) {
        std::string name = r.str();
        ck.params.emplace_back(std::move(name), r.tensor());
    }
    const std::uint32_t nbufs = r.u32();
    for (std::uint32_t i = 0; i < nbufs; ++i) {
        std::string name = r.str();
        ck.buffers.emplace_back(std::move(name), r.tensor());
    }
    const std::uint32_t nslots = r.u32();
    ck.adam_steps = r.i64();
    for (std::uint32_t i = 0; i < nslots; ++i) {
        Checkpoint::AdamSlot slot;
        slot.name = r.str();
        slot.m = r.tensor();
        slot.v = r.tensor();
        ck.adam_slots.push_back(std::move(slot));
    }
    return ck;
}

namespace {

void copy_state(const Checkpoint& ckpt, GroundingModel& model) {
    auto& reg = model.registry();
    if (ckpt.params.size() != reg.params().size())
        throw CheckpointError("checkpoint parameter count does not match the model");
    for (size_t i = 0; i < ckpt.params.size(); ++i) {
        auto& p = reg.params()[i];
        const auto& [name, t] = ckpt.params[i];
        if (p.name != name || !p.var->value.same_shape(t))
            throw CheckpointError("checkpoint parameter mismatch at '" + name + "'");
        p.var->value = t;
    }
    if (ckpt.buffers.size() != reg.buffers().size())
        throw CheckpointError("checkpoint buffer count does not match the model");
    for (size_t i = 0; i < ckpt.buffers.size(); ++i) {
        const auto& b = reg.buffers()[i];
        const auto& [name, t] = ckpt.buffers[i];
        if (b.name != name || !b.tensor->same_shape(t))
            throw CheckpointError("checkpoint buffer mismatch at '" + name + "'");
        *b.tensor = t;
    }
}

}  // namespace

RestoredModel restore_model(const Checkpoint& ckpt) {
    RestoredModel out;
    out.cfg = parse_config_text(ckpt.config_text);
    out.vocab = text::Vocabulary::from_words(ckpt.vocab_words, out.cfg.embed_dim);
    out.model = std::make_unique<GroundingModel>(out.cfg.model_config(), out.vocab);
    copy_state(ckpt, *out.model);
    out.step = ckpt.step;
    out.best_ap50 = ckpt.best_ap50;
    return out;
}

void restore_into(const Checkpoint& ckpt, GroundingModel& model, nn::Adam& adam) {
    const RunConfig ck_cfg = parse_config_text(ckpt.config_text);
    RunConfig cur;
    cur.preset = model.config().backbone.preset;
    cur.input_size = model.config().backbone.input_size;
    cur.width_mult = model.config().backbone.width_mult;
    cur.d_model = model.config().d_model;
    cur.d_fused = model.config().d_fused;
    cur.lstm_hidden = model.config().lstm_hidden;
    cur.embed_dim = model.config().embed_dim;
    cur.max_query_len = model.config().max_query_len;
    if (!(StructureKeys::of(ck_cfg) == StructureKeys::of(cur)))
        throw CheckpointError("checkpoint is incompatible with the configured model structure");
    copy_state(ckpt, model);
    adam.set_steps_taken(ckpt.adam_steps);
    adam.slots().clear();
    for (const auto& slot : ckpt.adam_slots) adam.slots()[slot.name] = {slot.m, slot.v};
}

double ap50_from_ious(const std::vector<double>& ious) {
    if (ious.empty()) throw data::DataError("ap50: empty iou list");
    int hits = 0;
    for (double v : ious)
        if (v > 0.5) ++hits;
    return 100.0 * hits / static_cast<double>(ious.size());
}

std::int64_t count_params(const nn::ParamRegistry& reg) { return reg.trainable_count(); }

EvalReport evaluate(GroundingModel& model, const text::Vocabulary& vocab,
                    const std::vector<data::Sample>& samples) {
    if (samples.empty()) throw data::DataError("evaluate: empty dataset");
    const int S = model.config().backbone.input_size;
    EvalReport report;
    report.param_count = count_params(model.registry());
    std::vector<double> ious;
    ious.reserve(samples.size());
    const size_t warmup = std::min<size_t>(10, samples.size() - 1);
    double total_ms = 0;
    size_t timed = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        data::LetterboxedSample lb = data::letterbox(s, S);
        Tensor img = data::to_input_tensor(lb.image);
        Tensor batch({1, 3, S, S});
        std::copy_n(img.data(), img.numel(), batch.data());
        text::TokenizedQuery q = text::tokenize(s.query);
        vocab.encode(q, model.config().max_query_len);

        const auto t0 = std::chrono::steady_clock::now();
        auto fwd = model.forward(batch, {q.ids}, /*training=*/false);
        fusion::PredictionSet pred = model.predictions(fwd.samples[0]);
        Box box_net = fusion::select_box(pred);
        const auto t1 = std::chrono::steady_clock::now();
        if (i >= warmup) {
            total_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
            ++timed;
        }

        Box box_orig = lb.tf.invert(box_net).clipped(s.image.cols, s.image.rows);
        EvalRecord rec;
        rec.id = s.id;
        rec.predicted = box_orig;
        rec.iou = iou(box_orig, s.gt);
        rec.confidence = pred.confidence[fusion::argmax_confidence(pred)];
        ious.push_back(rec.iou);
        report.records.push_back(std::move(rec));
    }
    report.ap50 = ap50_from_ious(ious);
    report.mean_inference_ms = timed ? total_ms / static_cast<double>(timed) : 0.0;
    return report;
}

double beta_margin(GroundingModel& model, const text::Vocabulary& vocab,
                   const std::vector<data::Sample>& samples) {
    const int S = model.config().backbone.input_size;
    double margin_sum = 0;
    long margin_count = 0;
    for (const auto& s : samples) {
        data::LetterboxedSample lb = data::letterbox(s, S);
        Tensor img = data::to_input_tensor(lb.image);
        Tensor batch({1, 3, S, S});
        std::copy_n(img.data(), img.numel(), batch.data());
        text::TokenizedQuery q = text::tokenize(s.query);
        vocab.encode(q, model.config().max_query_len);
        auto fwd = model.forward(batch, {q.ids}, /*training=*/false);
        for (int k = 0; k < 3; ++k) {
            const GridSpec& spec = model.layout().specs()[k];
            const BinaryMask mask = rasterize_mask(lb.gt, spec);
            const Tensor& beta = fwd.samples[0].xmodal[static_cast<size_t>(k)].beta->value;
            double in_sum = 0, out_sum = 0;
            long in_n = 0, out_n = 0;
            for (int i = 0; i < spec.cells(); ++i) {
                if (mask.values[static_cast<size_t>(i)]) {
                    in_sum += beta[i];
                    ++in_n;
                } else {
                    out_sum += beta[i];
                    ++out_n;
                }
            }
            if (in_n == 0 || out_n == 0) continue;
            margin_sum += in_sum / in_n - out_sum / out_n;
            ++margin_count;
        }
    }
    return margin_count ? margin_sum / static_cast<double>(margin_count) : 0.0;
}

TrainOutcome train(const RunConfig& cfg_in, const std::vector<data::Sample>& train_set,
                   const std::vector<data::Sample>& val_set, const std::string& out_dir,
                   std::ostream* log_stream, const std::string& resume_from) {
    if (train_set.empty()) throw TrainingError("training set is empty");
    RunConfig cfg = cfg_in;

    // vocabulary from the training queries
    std::vector<std::string> queries;
    queries.reserve(train_set.size());
    for (const auto& s : train_set) queries.push_back(s.query);
    text::GloveTable glove;
    bool have_glove = false;
    if (!cfg.glove_path.empty()) {
        try {
            glove = text::load_glove(cfg.glove_path);
            have_glove = true;
        } catch (const std::exception& e) {
            std::cerr << "warning: " << e.what() << "; falling back to random embeddings\n";
        }
    }
    text::Vocabulary vocab = text::Vocabulary::build(queries, cfg.embed_dim,
                                                     have_glove ? &glove : nullptr, cfg.seed);
    cfg.embed_dim = vocab.embed_dim();  // effective width (GloVe may override)

    auto model = std::make_unique<GroundingModel>(cfg.model_config(), vocab);
    if (cfg.freeze_embeddings) model->registry().set_trainable("text.embedding.table", false);
    nn::Adam adam;
    std::int64_t step = 0;
    double best_ap50 = -1.0;
    if (!resume_from.empty()) {
        const Checkpoint ck = load_checkpoint(resume_from);
        restore_into(ck, *model, adam);
        step = ck.step;
        best_ap50 = ck.best_ap50;
    }

    const int S = cfg.input_size;
    const int B = cfg.batch_size;
    const std::int64_t n = static_cast<std::int64_t>(train_set.size());
    const std::int64_t steps_per_epoch = (n + B - 1) / B;
    const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

    // letterboxing is deterministic per sample; do it once
    std::vector<data::LetterboxedSample> boxed;
    boxed.reserve(train_set.size());
    for (const auto& s : train_set) boxed.push_back(data::letterbox(s, S));

    std::ofstream log_file;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        log_file.open(fs::path(out_dir) / "train_log.jsonl", std::ios::app);
    }
    auto emit = [&](const std::string& line) {
        if (log_file.is_open()) log_file << line << "\n";
        if (log_stream) *log_stream << line << "\n";
    };

    TrainOutcome outcome;
    bool first_step = true;
    std::vector<std::int64_t> perm(train_set.size());
    std::iota(perm.begin(), perm.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(splitmix64(cfg.seed ^ (0xA5A5A5A5ull + static_cast<std::uint64_t>(epoch))));
        std::shuffle(perm.begin(), perm.end(), shuffle_rng);

        for (std::int64_t start = 0; start < n; start += B) {
            const int bsz = static_cast<int>(std::min<std::int64_t>(B, n - start));
            Tensor images({bsz, 3, S, S});
            std::vector<std::vector<int>> ids(static_cast<size_t>(bsz));
            std::vector<losses::GroundingTarget> targets(static_cast<size_t>(bsz));
            std::vector<std::string> batch_ids(static_cast<size_t>(bsz));

            for (int b = 0; b < bsz; ++b) {
                const std::int64_t idx = perm[static_cast<size_t>(start + b)];
                data::LetterboxedSample lb = boxed[static_cast<size_t>(idx)];
                if (cfg.augment) {
                    std::mt19937_64 aug_rng(splitmix64(cfg.seed) ^
                                            splitmix64(static_cast<std::uint64_t>(epoch) * 1000003ull +
                                                       static_cast<std::uint64_t>(idx)));
                    lb = data::augment(lb, aug_rng);
                }
                batch_ids[static_cast<size_t>(b)] = lb.id;
                Tensor img = data::to_input_tensor(lb.image);
                std::copy_n(img.data(), img.numel(), images.data() + static_cast<std::int64_t>(b) * img.numel());
                text::TokenizedQuery q = text::tokenize(lb.query);
                vocab.encode(q, cfg.max_query_len);
                ids[static_cast<size_t>(b)] = q.ids;
                targets[static_cast<size_t>(b)] = losses::make_target(lb.gt, model->layout());
            }

            auto fwd = model->forward(images, ids, /*training=*/true);
            std::vector<ad::Var> objectives;
            losses::LossBreakdown mean{};
            mean.lambda = cfg.lambda_mask;
            for (int b = 0; b < bsz; ++b) {
                const auto& sf = fwd.samples[static_cast<size_t>(b)];
                std::array<ad::Var, 3> beta_logits = {sf.xmodal[0].beta_logits,
                                                      sf.xmodal[1].beta_logits,
                                                      sf.xmodal[2].beta_logits};
                losses::SampleLoss sl =
                    losses::grounding_loss(beta_logits, sf.logits, sf.head_out,
                                           targets[static_cast<size_t>(b)], model->layout(),
                                           cfg.lambda_mask);
                objectives.push_back(sl.objective);
                for (int k = 0; k < 3; ++k) mean.mask_k[static_cast<size_t>(k)] += sl.values.mask_k[static_cast<size_t>(k)] / bsz;
                mean.confidence += sl.values.confidence / bsz;
                mean.box += sl.values.box / bsz;
            }
            mean.mask_total = mean.mask_k[0] + mean.mask_k[1] + mean.mask_k[2];
            mean.yolo = mean.confidence + mean.box;
            mean.total = mean.yolo + cfg.lambda_mask * mean.mask_total;

            if (!std::isfinite(mean.total)) {
                std::string blame;
                for (const auto& id : batch_ids) blame += id + " ";
                throw TrainingError("non-finite loss at step " + std::to_string(step + 1) +
                                    "; batch samples: " + blame);
            }

            ad::Var objective = objectives[0];
            for (size_t i = 1; i < objectives.size(); ++i) objective = ad::add(objective, objectives[i]);
            objective = ad::scale(objective, 1.0 / bsz);

            model->registry().zero_grads();
            ad::backward(objective);
            const double lr = nn::poly_lr(cfg.base_lr, step, total_steps);
            adam.step(model->registry(), lr, lr * cfg.backbone_lr_scale);
            ++step;

            if (first_step) {
                outcome.initial_total = mean.total;
                first_step = false;
            }
            outcome.final_total = mean.total;
            emit(loss_json(mean, step, lr));
        }

        if (!val_set.empty()) {
            EvalReport report = evaluate(*model, vocab, val_set);
            std::ostringstream os;
            os.precision(9);
            os << "{\"epoch\":" << epoch + 1 << ",\"val_ap50\":" << report.ap50 << "}";
            emit(os.str());
            if (report.ap50 > best_ap50) {
                best_ap50 = report.ap50;
                if (!out_dir.empty()) {
                    const std::string path = (fs::path(out_dir) / "checkpoint_best.vgck").string();
                    save_checkpoint(snapshot(*model, vocab, &adam, cfg, step, best_ap50), path);
                    outcome.best_checkpoint = path;
                }
            }
        }
    }

    if (!out_dir.empty()) {
        const std::string path = (fs::path(out_dir) / "checkpoint_last.vgck").string();
        save_checkpoint(snapshot(*model, vocab, &adam, cfg, step, best_ap50), path);
        outcome.last_checkpoint = path;
        if (outcome.best_checkpoint.empty()) outcome.best_checkpoint = path;
    }
    outcome.best_ap50 = best_ap50;
    outcome.steps = step;
    outcome.model = std::move(model);
    outcome.vocab = vocab;
    return outcome;
}

}  // namespace vg::train
