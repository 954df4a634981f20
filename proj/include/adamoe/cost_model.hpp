// SPDX-License-Identifier: Apache-2.0
//
// Expert FLOPs accounting and a modeled step time: a fixed overhead share
// plus a part proportional to expert compute, normalized to always-top-2
// routing.

#pragma once

#include <vector>

#include "adamoe/moe.hpp"

namespace adamoe {

struct CostReport {
    double expert_flops_per_token = 0.0;  // averaged over the batch
    double batch_expert_flops = 0.0;
    double total_flops = 0.0;             // incl. attention/gate/head, for context
    double norm_compute = 1.0;            // relative to top-2, in [0.5, 1]
    double modeled_step_time = 1.0;       // relative to top-2, >= norm_compute
    double frac_top1 = 0.0;
};

/// FLOPs for one expert invocation on one token: two [hidden x intermediate]
/// matmuls at 2 FLOPs per multiply-accumulate.
double expert_flops(int hidden, int intermediate);

/// Expert compute relative to top-2 routing: 1 - frac_top1/2.
double normalized_compute(double frac_top1);

/// Modeled step time t = w + (1-w) * normalized_compute(frac_top1).
double step_time_model(double frac_top1, double overhead_share);

struct ComputeTimePair {
    double norm_compute;
    double norm_time;
};

/// Published reference measurements of normalized MoE-layer running time
/// against normalized compute at 100/80/50/20 percent top-1 routing.
const std::vector<ComputeTimePair>& reference_pairs();

struct CostFit {
    double overhead_share = 0.0;
    std::vector<double> residuals;  // observed - modeled, per pair
    double max_abs_residual = 0.0;
};

/// Closed-form least squares for the overhead share:
/// w* = sum u_i v_i / sum u_i^2 with u = 1 - compute, v = time - compute.
CostFit fit_overhead_share(const std::vector<ComputeTimePair>& pairs);

/// Exact invocation counting over a completed forward pass.
/// decisions: [layer][token].
CostReport batch_cost(const std::vector<std::vector<GatingDecision>>& decisions,
                      int hidden, int intermediate, double overhead_share,
                      double total_flops = 0.0);

}  // namespace adamoe
