#pragma once

#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "vg/cli_config.hpp"
#include "vg/data.hpp"
#include "vg/losses.hpp"
#include "vg/model.hpp"

namespace vg::train {

class CheckpointError : public std::runtime_error {
public:
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

class TrainingError : public std::runtime_error {
public:
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

// In-memory checkpoint image: canonical config text, vocabulary words,
// parameter/buffer tensors in registry order, optimizer state and counters.
struct Checkpoint {
    std::string config_text;
    std::vector<std::string> vocab_words;
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::pair<std::string, Tensor>> buffers;
    struct AdamSlot {
        std::string name;
        Tensor m, v;
    };
    std::vector<AdamSlot> adam_slots;
    std::int64_t adam_steps = 0;
    std::int64_t step = 0;
    double best_ap50 = 0;
};

Checkpoint snapshot(const GroundingModel& model, const text::Vocabulary& vocab,
                    const nn::Adam* adam, const RunConfig& cfg, std::int64_t step,
                    double best_ap50);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds vocabulary + model from a checkpoint and restores all state.
struct RestoredModel {
    RunConfig cfg;
    text::Vocabulary vocab;
    std::unique_ptr<GroundingModel> model;
    std::int64_t step = 0;
    double best_ap50 = 0;
};
RestoredModel restore_model(const Checkpoint& ckpt);
// Restore into an existing model/optimizer (resume): config must agree on
// every model-structure key.
void restore_into(const Checkpoint& ckpt, GroundingModel& model, nn::Adam& adam);

// ---- evaluation ----

struct EvalRecord {
    std::string id;
    Box predicted;  // original pixel frame
    double iou = 0;
    double confidence = 0;
};

struct EvalReport {
    double ap50 = 0;          // percentage, strict IoU > 0.5
    double mean_inference_ms = 0;  // forward + select, after 10 warm-up samples
    std::int64_t param_count = 0;
    std::vector<EvalRecord> records;
};

// Strict-inequality counting: 100 * |{iou > 0.5}| / N.
double ap50_from_ious(const std::vector<double>& ious);

EvalReport evaluate(GroundingModel& model, const text::Vocabulary& vocab,
                    const std::vector<data::Sample>& samples);

std::int64_t count_params(const nn::ParamRegistry& reg);

// Mean attention inside the gt mask minus mean outside, averaged over
// samples and resolutions (eval mode).
double beta_margin(GroundingModel& model, const text::Vocabulary& vocab,
                   const std::vector<data::Sample>& samples);

// ---- training ----

struct StepLog {
    std::int64_t step = 0;
    double lr = 0;
    losses::LossBreakdown loss;
};

struct TrainOutcome {
    double best_ap50 = 0;
    std::int64_t steps = 0;
    double initial_total = 0;  // first-step training loss
    double final_total = 0;    // last-step training loss
    std::string best_checkpoint;
    std::string last_checkpoint;
    std::unique_ptr<GroundingModel> model;  // state after the final step
    text::Vocabulary vocab;
};

// Full training run per the config schedule: shuffled mini-batches, Adam with
// a reduced-lr backbone group, power-1 polynomial decay to zero, per-step
// structured logging, per-epoch validation AP50, best-checkpoint tracking.
// out_dir may be empty (no files written). resume_from optionally continues
// a previous run's state.
TrainOutcome train(const RunConfig& cfg, const std::vector<data::Sample>& train_set,
                   const std::vector<data::Sample>& val_set, const std::string& out_dir,
                   std::ostream* log_stream = nullptr, const std::string& resume_from = "");

}  // namespace vg::train
