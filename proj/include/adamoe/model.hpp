// SPDX-License-Identifier: Apache-2.0
//
// Toy transformer: embedding -> repeated {attention, MoE-FFN} pre-norm blocks
// -> output head, for decoder-style language modeling or encoder-style
// classification. Records per-layer routing statistics on every forward.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "adamoe/data_io.hpp"
#include "adamoe/moe.hpp"
#include "adamoe/tensor.hpp"

namespace adamoe {

struct ModelConfig {
    int vocab_size = 0;
    int hidden = 64;
    int intermediate = 128;
    int num_layers = 4;
    int num_experts = 8;
    int heads = 2;
    RoutingPolicy policy;
    double balance_coeff = 0.01;
    TaskKind task = TaskKind::kCausalLm;
    int max_seq_len = 128;
    int num_classes = 2;  // classification only

    void validate() const;  // throws std::invalid_argument
};

struct AttentionParams {
    Tensor wq, wk, wv, wo;  // each [hidden x hidden]
};

struct BlockParams {
    Tensor ln1_gamma, ln1_beta;
    Tensor ln2_gamma, ln2_beta;
    AttentionParams attn;
    GatingNetwork gate;
    std::vector<Expert> experts;
};

struct ForwardRecord {
    Tensor logits;  // [seq x vocab] (causal LM) or [1 x classes]
    std::vector<double> per_layer_top2_ratio;
    std::vector<LoadBalanceStats> per_layer_stats;
    std::vector<std::vector<GatingDecision>> per_token_decisions;  // [layer][token]
};

/// Scaled dot-product multi-head attention, no residual or normalization.
Tensor multi_head_attention(const AttentionParams& p, const Tensor& x, bool causal,
                            int heads);

/// Pre-norm residual attention sublayer: x + MHA(LN1(x)).
Tensor attention_forward(const BlockParams& block, const Tensor& x, bool causal,
                         int heads);

class Model {
public:
    Model(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ModelConfig& mutable_config() { return cfg_; }  // e.g. eval-time policy swap

    /// Forward over one sequence of token ids. `forced` replays the expert
    /// selection of an earlier pass (weights still follow the current gate).
    ForwardRecord forward(const std::vector<int>& token_ids,
                          const std::vector<std::vector<RouteChoice>>* forced = nullptr) const;

    /// Task cross-entropy + balance_coeff * sum of per-layer balance losses.
    Tensor total_loss(const ForwardRecord& record, const std::vector<int>& targets) const;
    Tensor total_loss(const ForwardRecord& record, int label) const;  // classification

    /// Named parameters in a fixed order (checkpoint/optimizer order).
    const std::vector<std::pair<std::string, Tensor>>& parameters() const {
        return params_;
    }
    void zero_grads();

    static std::vector<std::vector<RouteChoice>> routes_of(const ForwardRecord& record);

private:
    ModelConfig cfg_;
    Tensor embedding_;  // [vocab x hidden]
    Tensor pos_;        // [max_seq_len x hidden]
    std::vector<BlockParams> blocks_;
    Tensor final_gamma_, final_beta_;
    Tensor w_out_;  // [hidden x vocab] or [hidden x classes]
    std::vector<std::pair<std::string, Tensor>> params_;
};

}  // namespace adamoe
