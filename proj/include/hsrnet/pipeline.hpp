#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hsrnet/dataset.hpp"
#include "hsrnet/losses.hpp"
#include "hsrnet/metrics.hpp"
#include "hsrnet/model.hpp"

namespace hsrnet {

struct TrainConfig {
    double lr = 1e-5;
    int epochs = 1;
    int batch_size = 1;
    int k = 3;          // GT kernel neighbours
    double beta = 0.3;  // GT kernel scale
    bool augmentation = true;
    uint64_t seed = 0;
    LossNorm loss_norm = LossNorm::pixels;
    ModelConfig model;

    int ckpt_every = 0;     // steps between snapshots; 0 writes only the final one
    std::string resume;     // checkpoint to continue (weights + optimizer + step)
    std::string init_from;  // checkpoint for weights-only initialization

    void validate() const;
};

// Flat "key = value" file with '#' comments; unknown keys are errors.
TrainConfig parse_train_config(const std::string& path);
TrainConfig parse_train_config_text(const std::string& text, const std::string& origin);

struct TrainResult {
    Checkpoint final_checkpoint;          // includes the optimizer block
    std::vector<LossBreakdown> history;   // one entry per executed step
    int64_t first_step = 1;               // global index of history.front()
};

// History CSV layout: step,l0,l1..l5,lambda1..lambda5,total.
std::string history_to_csv(const TrainResult& result);

// Runs the loop; with a non-empty out_dir writes final.ckpt, history.csv and
// periodic step_NNNNNN.ckpt files there.
TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& data,
                  const std::string& out_dir = "");

// Whole-image protocol: pad to ×16 with zeros, predict, crop back, compare
// against adaptive-kernel GT (ROI-masked when present).
EvalReport evaluate(const HsrNet& model, const std::vector<Sample>& data, int bins = 5, int k = 3,
                    double beta = 0.3);

struct AblationRow {
    std::string label;
    std::string fingerprint;
    double final_l0 = 0.0;
    EvalReport report;
    uint64_t data_hash = 0;
};

// axis: "components" (6 toggle rows), "ratio" (r ∈ 8..128), or "sfm_order"
// (4 combination variants); every row trains on the same data and seed.
std::vector<AblationRow> ablate(const TrainConfig& base, const std::string& axis,
                                const std::vector<Sample>& data);

std::string ablation_to_json(const std::vector<AblationRow>& rows);

}  // namespace hsrnet
