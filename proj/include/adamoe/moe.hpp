// SPDX-License-Identifier: Apache-2.0
//
// Mixture-of-experts layer: expert FFNs, gating network, top-1/top-2/adaptive
// routing, sparse dispatch-combine, and the top-1-restricted load-balancing
// loss.

#pragma once

#include <vector>

#include "adamoe/tensor.hpp"

namespace adamoe {

enum class GateKind { kTop1, kTop2, kAdaptive };

/// How the gap between the two largest probabilities is measured against the
/// threshold: (p1-p2)/(p1+p2) by default, or the raw difference p1-p2.
enum class ThresholdMode { kPairNormalized, kRawDifference };

/// Combine weights over the selected expert set: renormalized (top-1 weight
/// is 1.0, top-2 weights are p1/(p1+p2), p2/(p1+p2)) or the raw gate
/// probabilities.
enum class CombineWeightMode { kRenormalized, kRawGate };

struct RoutingPolicy {
    GateKind kind = GateKind::kAdaptive;
    double threshold = 0.1;  // in [0,1]; used by kAdaptive only
    ThresholdMode threshold_mode = ThresholdMode::kPairNormalized;
    CombineWeightMode combine_weight_mode = CombineWeightMode::kRenormalized;
};

/// Two-layer FFN expert: relu(x . w0) . w1.
struct Expert {
    Tensor w0;  // [hidden x intermediate]
    Tensor w1;  // [intermediate x hidden]
};

struct GatingNetwork {
    Tensor wg;  // [hidden x num_experts]
};

/// Routing decision for one token. expert_ids[0] is the argmax of full_probs
/// (ties to the lowest index); weights are renormalized over the selected set
/// and sum to 1.
struct GatingDecision {
    std::vector<int> expert_ids;  // 1 or 2 entries, distinct
    std::vector<double> weights;
    bool is_top2 = false;
    std::vector<double> full_probs;
};

/// Expert selection only; used to replay a forward pass with frozen routing.
struct RouteChoice {
    std::vector<int> expert_ids;
    bool is_top2 = false;
};

struct LoadBalanceStats {
    std::vector<double> f1;  // top-1 dispatch fractions; zeros when no top-1 tokens
    Tensor p;                // mean gate probabilities over all tokens, shape {E};
                             // graph-connected when produced by moe_forward
    int expert_count = 0;
    long top1_token_count = 0;
    long total_token_count = 0;
};

struct MoELayerOutput {
    Tensor outputs;  // [tokens x hidden]
    std::vector<GatingDecision> decisions;
    LoadBalanceStats stats;
    double top2_ratio = 0.0;
};

Tensor expert_forward(const Expert& e, const Tensor& x);

/// Row-wise softmax of x . wg; each row sums to 1.
Tensor gate_probabilities(const GatingNetwork& g, const Tensor& x);

/// Route one token given its probability vector (must sum to 1 within 1e-9).
GatingDecision select_experts(const std::vector<double>& probs,
                              const RoutingPolicy& policy);

/// Weighted sum of selected expert outputs: weights [1 x k] (or flat k),
/// outputs stacked [k x hidden]. Gradients flow through both operands.
Tensor combine(const Tensor& weights, const Tensor& expert_outputs);
/// Convenience form using the decision's (constant) weights.
Tensor combine(const GatingDecision& decision,
               const std::vector<Tensor>& expert_outputs);

/// E * sum_e f1[e] * p[e]; differentiable through stats.p. Exactly 0 when no
/// token was routed top-1.
Tensor load_balance_loss(const LoadBalanceStats& stats);

/// Batch-level stats from per-sequence stats: f1 merged by top-1 counts, p by
/// token counts (keeps the gradient paths of each part).
LoadBalanceStats merge_stats(const std::vector<LoadBalanceStats>& parts);

/// Sparse combine-weight matrix [tokens x E] as a graph node over `probs`:
/// nonzero only at each token's selected experts, backward follows the
/// pair-renormalization (or raw-gate) derivative.
Tensor combine_weights(const Tensor& probs,
                       const std::vector<GatingDecision>& decisions,
                       CombineWeightMode mode);

/// Full layer: gate, route (or replay `forced`), dispatch tokens to experts,
/// weighted combine, batch statistics.
MoELayerOutput moe_forward(const std::vector<Expert>& experts,
                           const GatingNetwork& gate, const RoutingPolicy& policy,
                           const Tensor& x,
                           const std::vector<RouteChoice>* forced = nullptr);

}  // namespace adamoe
