// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "adamoe/curriculum.hpp"
#include "adamoe/data_io.hpp"
#include "adamoe/model.hpp"

namespace adamoe {

/// Configuration problem: bad field value, unknown key, unreadable file.
/// CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Everything a run needs; serialized losslessly into the run directory.
struct RunConfig {
    // model
    TaskKind task = TaskKind::kCausalLm;
    RoutingPolicy policy;
    int hidden = 64;
    int intermediate = 128;
    int num_layers = 4;
    int num_experts = 8;
    int heads = 2;
    int max_seq_len = 128;
    double balance_coeff = 0.01;
    // run
    std::uint64_t seed = 1;
    int epochs = 1;
    int batch_size = 16;
    double learning_rate = 1e-3;
    bool curriculum_enabled = true;
    AnchorMetric anchor_metric = AnchorMetric::kTotalCount;
    std::string eval_policy = "same";  // "same" | "top1"
    std::string train_corpus;
    std::string val_corpus;  // optional
    std::string output_dir;
    bool dump_decisions = false;
    MetricsFormat metrics_format = MetricsFormat::kCsv;

    void validate() const;  // throws ConfigError
    ModelConfig model_config(int vocab_size, int num_classes) const;
    std::string to_json() const;  // stable key order
};

RunConfig parse_run_config(const std::string& json_text);  // unknown keys rejected
RunConfig load_run_config(const std::string& path);

}  // namespace adamoe
