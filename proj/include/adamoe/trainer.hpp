// SPDX-License-Identifier: Apache-2.0
//
// Deterministic single-threaded training loop: adaptive-moment optimizer,
// per-epoch curriculum scheduling, metrics/schedule/checkpoint persistence.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adamoe/config.hpp"
#include "adamoe/curriculum.hpp"
#include "adamoe/data_io.hpp"
#include "adamoe/model.hpp"

namespace adamoe {

struct OptimizerConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamOptimizer {
public:
    explicit AdamOptimizer(OptimizerConfig cfg) : cfg_(cfg) {}

    /// Applies one update from the accumulated grads, then it is the caller's
    /// job to zero them before the next backward.
    void step(const std::vector<std::pair<std::string, Tensor>>& params);

    const OptimizerConfig& config() const { return cfg_; }

private:
    OptimizerConfig cfg_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Per-sample routing measured during a step; feeds the next epoch's
/// curriculum.
struct SampleRouting {
    int sample_id = 0;
    int seq_len = 1;
    std::vector<int> top2_counts;  // per layer
};

struct DecisionRow {
    long step;
    int layer;
    int sample_id;
    int position;
    bool is_top2;
    int expert0;
    int expert1;  // -1 for top-1
};

struct TrainStepResult {
    StepMetrics metrics;
    std::vector<SampleRouting> routing;
    std::vector<DecisionRow> decisions;  // filled only when requested
    double batch_expert_flops = 0.0;
};

/// One optimizer step over a batch: forwards each sequence, merges routing
/// stats at batch level, applies task + balance loss, backprops, updates.
/// Aborts with a diagnostic on non-finite loss.
TrainStepResult train_step(Model& model, AdamOptimizer& opt, const Batch& batch,
                           double overhead_share, long step_index, int epoch,
                           bool collect_decisions = false);

/// Mean task loss over a sample set without gradient updates, using
/// `eval_policy` ("same" keeps the training policy, "top1" forces top-1).
double evaluate(Model& model, const std::vector<Sample>& samples,
                const std::string& eval_policy);

struct TrainResult {
    std::string run_dir;
    long total_steps = 0;
    long steps_per_epoch = 0;
    double final_train_loss = 0.0;     // mean task loss over the last epoch
    std::optional<double> final_val_loss;
    std::vector<double> val_loss_per_epoch;
    double mean_frac_top1 = 0.0;       // over steps
    double mean_frac_top2 = 0.0;
    double total_expert_flops = 0.0;
    int num_layers = 0;
};

/// Full run: loads corpora, trains for the configured epochs, writes
/// config.json, metrics, val.csv, schedule.txt, checkpoint.bin (and
/// decisions.csv when enabled) into cfg.output_dir.
TrainResult run_training(const RunConfig& cfg);

}  // namespace adamoe
