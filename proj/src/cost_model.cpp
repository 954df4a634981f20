// SPDX-License-Identifier: Apache-2.0

#include "adamoe/cost_model.hpp"

#include <cmath>
#include <stdexcept>

namespace adamoe {

double expert_flops(int hidden, int intermediate) {
    if (hidden <= 0 || intermediate <= 0) {
        throw std::invalid_argument("expert_flops: sizes must be positive");
    }
    return 4.0 * static_cast<double>(hidden) * static_cast<double>(intermediate);
}

double normalized_compute(double frac_top1) {
    if (frac_top1 < 0.0 || frac_top1 > 1.0) {
        throw std::invalid_argument("normalized_compute: frac_top1 must be in [0,1]");
    }
    return 1.0 - frac_top1 / 2.0;
}

double step_time_model(double frac_top1, double overhead_share) {
    if (overhead_share < 0.0 || overhead_share > 1.0) {
        throw std::invalid_argument("step_time_model: overhead share must be in [0,1]");
    }
    return overhead_share + (1.0 - overhead_share) * normalized_compute(frac_top1);
}

const std::vector<ComputeTimePair>& reference_pairs() {
    static const std::vector<ComputeTimePair> pairs = {
        {0.5, 0.67},   // 100% top-1
        {0.6, 0.76},   // 80% top-1
        {0.75, 0.92},  // 50% top-1
        {0.9, 0.97},   // 20% top-1
    };
    return pairs;
}

CostFit fit_overhead_share(const std::vector<ComputeTimePair>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("fit_overhead_share: no pairs");
    double num = 0.0, den = 0.0;
    for (const auto& [c, t] : pairs) {
        double u = 1.0 - c;
        num += u * (t - c);
        den += u * u;
    }
    if (den == 0.0) {
        throw std::invalid_argument("fit_overhead_share: all pairs at compute 1.0");
    }
    CostFit fit;
    fit.overhead_share = num / den;
    for (const auto& [c, t] : pairs) {
        double r = t - (c + fit.overhead_share * (1.0 - c));
        fit.residuals.push_back(r);
        fit.max_abs_residual = std::max(fit.max_abs_residual, std::fabs(r));
    }
    return fit;
}

CostReport batch_cost(const std::vector<std::vector<GatingDecision>>& decisions,
                      int hidden, int intermediate, double overhead_share,
                      double total_flops) {
    long tokens = 0, invocations = 0, top1 = 0;
    for (const auto& layer : decisions) {
        for (const GatingDecision& d : layer) {
            ++tokens;
            invocations += static_cast<long>(d.expert_ids.size());
            if (!d.is_top2) ++top1;
        }
    }
    if (tokens == 0) throw std::invalid_argument("batch_cost: no decisions");

    CostReport report;
    double per_invocation = expert_flops(hidden, intermediate);
    report.batch_expert_flops = static_cast<double>(invocations) * per_invocation;
    report.expert_flops_per_token = report.batch_expert_flops / static_cast<double>(tokens);
    report.frac_top1 = static_cast<double>(top1) / static_cast<double>(tokens);
    report.norm_compute = normalized_compute(report.frac_top1);
    report.modeled_step_time = step_time_model(report.frac_top1, overhead_share);
    report.total_flops = total_flops > 0.0
                             ? total_flops
                             : report.batch_expert_flops;
    return report;
}

}  // namespace adamoe
