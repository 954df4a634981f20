// SPDX-License-Identifier: Apache-2.0

#include "adamoe/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace adamoe {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config field \"") + key + "\" has the wrong type");
    }
}

std::string read_choice(const json& j, const char* key, std::string current,
                        const std::set<std::string>& allowed) {
    if (j.contains(key)) {
        if (!j.at(key).is_string()) {
            throw ConfigError(std::string("config field \"") + key + "\" must be a string");
        }
        current = j.at(key).get<std::string>();
    }
    if (!allowed.count(current)) {
        std::ostringstream os;
        os << "config field \"" << key << "\": \"" << current << "\" is not one of {";
        bool first = true;
        for (const auto& a : allowed) {
            os << (first ? "" : ", ") << a;
            first = false;
        }
        os << "}";
        throw ConfigError(os.str());
    }
    return current;
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "task",          "policy",        "threshold",       "threshold_mode",
        "combine_weight_mode", "hidden",  "intermediate",    "layers",
        "experts",       "heads",         "max_seq_len",     "balance_coeff",
        "seed",          "epochs",        "batch_size",      "learning_rate",
        "curriculum",    "anchor_metric", "eval_policy",     "train_corpus",
        "val_corpus",    "output_dir",    "dump_decisions",  "metrics_format"};
    return keys;
}

}  // namespace

void RunConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("config field \"" + field + "\": " + why);
    };
    if (hidden < 1) fail("hidden", "must be >= 1");
    if (intermediate < 1) fail("intermediate", "must be >= 1");
    if (heads < 1 || hidden % heads != 0) fail("heads", "hidden must be divisible by heads");
    if (num_layers < 1) fail("layers", "must be >= 1");
    int min_experts = policy.kind == GateKind::kTop1 ? 1 : 2;
    if (num_experts < min_experts) {
        fail("experts", "must be >= " + std::to_string(min_experts) + " for this policy");
    }
    if (policy.threshold < 0.0 || policy.threshold > 1.0) fail("threshold", "must be in [0,1]");
    if (max_seq_len < 2) fail("max_seq_len", "must be >= 2");
    if (epochs < 0) fail("epochs", "must be >= 0");
    if (batch_size < 1) fail("batch_size", "must be >= 1");
    if (learning_rate < 0.0) fail("learning_rate", "must be >= 0");
    if (balance_coeff < 0.0) fail("balance_coeff", "must be >= 0");
    if (train_corpus.empty()) fail("train_corpus", "is required");
    if (output_dir.empty()) fail("output_dir", "is required");
}

ModelConfig RunConfig::model_config(int vocab_size, int num_classes) const {
    ModelConfig mc;
    mc.vocab_size = vocab_size;
    mc.hidden = hidden;
    mc.intermediate = intermediate;
    mc.num_layers = num_layers;
    mc.num_experts = num_experts;
    mc.heads = heads;
    mc.policy = policy;
    mc.balance_coeff = balance_coeff;
    mc.task = task;
    mc.max_seq_len = max_seq_len;
    mc.num_classes = num_classes;
    return mc;
}

std::string RunConfig::to_json() const {
    ordered_json j;
    j["task"] = task == TaskKind::kCausalLm ? "causal_lm" : "classification";
    j["policy"] = policy.kind == GateKind::kTop1   ? "top1"
                  : policy.kind == GateKind::kTop2 ? "top2"
                                                   : "adaptive";
    j["threshold"] = policy.threshold;
    j["threshold_mode"] = policy.threshold_mode == ThresholdMode::kPairNormalized
                              ? "pair_normalized"
                              : "raw_difference";
    j["combine_weight_mode"] = policy.combine_weight_mode == CombineWeightMode::kRenormalized
                                   ? "renormalized"
                                   : "raw_gate";
    j["hidden"] = hidden;
    j["intermediate"] = intermediate;
    j["layers"] = num_layers;
    j["experts"] = num_experts;
    j["heads"] = heads;
    j["max_seq_len"] = max_seq_len;
    j["balance_coeff"] = balance_coeff;
    j["seed"] = seed;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["learning_rate"] = learning_rate;
    j["curriculum"] = curriculum_enabled;
    j["anchor_metric"] =
        anchor_metric == AnchorMetric::kTotalCount ? "total_count" : "mean_ratio";
    j["eval_policy"] = eval_policy;
    j["train_corpus"] = train_corpus;
    j["val_corpus"] = val_corpus;
    j["output_dir"] = output_dir;
    j["dump_decisions"] = dump_decisions;
    j["metrics_format"] = metrics_format == MetricsFormat::kCsv ? "csv" : "jsonl";
    return j.dump(2) + "\n";
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known_keys().count(key)) {
            throw ConfigError("unknown config key \"" + key + "\"");
        }
    }

    RunConfig c;
    std::string task = read_choice(j, "task", "causal_lm", {"causal_lm", "classification"});
    c.task = task == "causal_lm" ? TaskKind::kCausalLm : TaskKind::kClassification;
    std::string pol = read_choice(j, "policy", "adaptive", {"top1", "top2", "adaptive"});
    c.policy.kind = pol == "top1"   ? GateKind::kTop1
                    : pol == "top2" ? GateKind::kTop2
                                    : GateKind::kAdaptive;
    read_field(j, "threshold", c.policy.threshold);
    std::string tm = read_choice(j, "threshold_mode", "pair_normalized",
                                 {"pair_normalized", "raw_difference"});
    c.policy.threshold_mode = tm == "pair_normalized" ? ThresholdMode::kPairNormalized
                                                      : ThresholdMode::kRawDifference;
    std::string cm = read_choice(j, "combine_weight_mode", "renormalized",
                                 {"renormalized", "raw_gate"});
    c.policy.combine_weight_mode = cm == "renormalized" ? CombineWeightMode::kRenormalized
                                                        : CombineWeightMode::kRawGate;
    read_field(j, "hidden", c.hidden);
    read_field(j, "intermediate", c.intermediate);
    read_field(j, "layers", c.num_layers);
    read_field(j, "experts", c.num_experts);
    read_field(j, "heads", c.heads);
    read_field(j, "max_seq_len", c.max_seq_len);
    read_field(j, "balance_coeff", c.balance_coeff);
    read_field(j, "seed", c.seed);
    read_field(j, "epochs", c.epochs);
    read_field(j, "batch_size", c.batch_size);
    read_field(j, "learning_rate", c.learning_rate);
    read_field(j, "curriculum", c.curriculum_enabled);
    std::string am = read_choice(j, "anchor_metric", "total_count",
                                 {"total_count", "mean_ratio"});
    c.anchor_metric = am == "total_count" ? AnchorMetric::kTotalCount
                                          : AnchorMetric::kMeanRatio;
    c.eval_policy = read_choice(j, "eval_policy", "same", {"same", "top1"});
    read_field(j, "train_corpus", c.train_corpus);
    read_field(j, "val_corpus", c.val_corpus);
    read_field(j, "output_dir", c.output_dir);
    read_field(j, "dump_decisions", c.dump_decisions);
    std::string mf = read_choice(j, "metrics_format", "csv", {"csv", "jsonl"});
    c.metrics_format = mf == "csv" ? MetricsFormat::kCsv : MetricsFormat::kJsonLines;
    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

}  // namespace adamoe
