// SPDX-License-Identifier: Apache-2.0

#include "adamoe/moe.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace adamoe {

Tensor expert_forward(const Expert& e, const Tensor& x) {
    return matmul(relu(matmul(x, e.w0)), e.w1);
}

Tensor gate_probabilities(const GatingNetwork& g, const Tensor& x) {
    return softmax(matmul(x, g.wg), 1);
}

namespace {

// argmax with ties to the lowest index; `exclude` skips one index
int argmax_excluding(const std::vector<double>& v, int exclude) {
    int best = -1;
    for (int i = 0; i < static_cast<int>(v.size()); ++i) {
        if (i == exclude) continue;
        if (best < 0 || v[i] > v[static_cast<std::size_t>(best)]) best = i;
    }
    return best;
}

}  // namespace

GatingDecision select_experts(const std::vector<double>& probs,
                              const RoutingPolicy& policy) {
    if (probs.empty()) throw std::invalid_argument("select_experts: empty probability vector");
    double total = 0.0;
    for (double p : probs) total += p;
    if (std::fabs(total - 1.0) > 1e-9) {
        throw std::invalid_argument("select_experts: not a probability vector (sum = " +
                                    std::to_string(total) + ")");
    }
    if (policy.kind != GateKind::kTop1 && probs.size() < 2) {
        throw std::invalid_argument("select_experts: top-2 routing needs at least 2 experts");
    }

    GatingDecision d;
    d.full_probs = probs;
    int e1 = argmax_excluding(probs, -1);
    bool top2 = false;
    int e2 = -1;
    if (policy.kind == GateKind::kTop2) {
        top2 = true;
    } else if (policy.kind == GateKind::kAdaptive) {
        e2 = argmax_excluding(probs, e1);
        double p1 = probs[static_cast<std::size_t>(e1)];
        double p2 = probs[static_cast<std::size_t>(e2)];
        double gap = policy.threshold_mode == ThresholdMode::kPairNormalized
                         ? (p1 - p2) / (p1 + p2)
                         : (p1 - p2);
        top2 = gap <= policy.threshold;  // inclusive
    }

    if (top2) {
        if (e2 < 0) e2 = argmax_excluding(probs, e1);
        double p1 = probs[static_cast<std::size_t>(e1)];
        double p2 = probs[static_cast<std::size_t>(e2)];
        d.expert_ids = {e1, e2};
        d.weights = {p1 / (p1 + p2), p2 / (p1 + p2)};
        d.is_top2 = true;
    } else {
        d.expert_ids = {e1};
        d.weights = {1.0};
        d.is_top2 = false;
    }
    return d;
}

Tensor combine(const Tensor& weights, const Tensor& expert_outputs) {
    Tensor w = weights.rank() == 1 ? reshape(weights, {1, weights.size()}) : weights;
    if (w.rank() != 2 || w.rows() != 1 || w.cols() != expert_outputs.rows()) {
        throw std::invalid_argument(
            "combine: " + std::to_string(w.size()) + " weights for " +
            std::to_string(expert_outputs.rows()) + " expert outputs");
    }
    return matmul(w, expert_outputs);
}

Tensor combine(const GatingDecision& decision,
               const std::vector<Tensor>& expert_outputs) {
    if (expert_outputs.size() != decision.expert_ids.size()) {
        throw std::invalid_argument("combine: " + std::to_string(expert_outputs.size()) +
                                    " outputs for " +
                                    std::to_string(decision.expert_ids.size()) +
                                    " selected experts");
    }
    std::vector<Tensor> stacked;
    stacked.reserve(expert_outputs.size());
    for (const Tensor& o : expert_outputs)
        stacked.push_back(o.rank() == 1 ? reshape(o, {1, o.size()}) : o);
    Tensor w({1, decision.weights.size()}, decision.weights);
    Tensor rows = stacked.size() == 1 ? stacked[0] : [&] {
        // stack k row vectors into [k x hidden] via transpose of concat
        std::vector<Tensor> cols;
        cols.reserve(stacked.size());
        for (const Tensor& s : stacked) cols.push_back(transpose(s));
        return transpose(concat_cols(cols));
    }();
    return matmul(w, rows);
}

Tensor load_balance_loss(const LoadBalanceStats& stats) {
    if (stats.top1_token_count == 0) return Tensor::scalar(0.0);
    if (stats.f1.size() != stats.p.size()) {
        throw std::invalid_argument("load_balance_loss: f1/p length mismatch");
    }
    Tensor f1({stats.f1.size()}, stats.f1);
    return scale(sum(mul(f1, stats.p)), static_cast<double>(stats.expert_count));
}

LoadBalanceStats merge_stats(const std::vector<LoadBalanceStats>& parts) {
    if (parts.empty()) throw std::invalid_argument("merge_stats: empty input");
    LoadBalanceStats out;
    out.expert_count = parts[0].expert_count;
    for (const auto& s : parts) {
        if (s.expert_count != out.expert_count) {
            throw std::invalid_argument("merge_stats: expert count mismatch");
        }
        out.top1_token_count += s.top1_token_count;
        out.total_token_count += s.total_token_count;
    }
    std::size_t e = static_cast<std::size_t>(out.expert_count);
    out.f1.assign(e, 0.0);
    if (out.top1_token_count > 0) {
        for (const auto& s : parts) {
            for (std::size_t i = 0; i < e; ++i) {
                out.f1[i] += s.f1[i] * static_cast<double>(s.top1_token_count) /
                             static_cast<double>(out.top1_token_count);
            }
        }
    }
    Tensor p;
    bool first = true;
    for (const auto& s : parts) {
        double w = static_cast<double>(s.total_token_count) /
                   static_cast<double>(out.total_token_count);
        Tensor term = scale(s.p, w);
        p = first ? term : add(p, term);
        first = false;
    }
    out.p = p;
    return out;
}

Tensor combine_weights(const Tensor& probs,
                       const std::vector<GatingDecision>& decisions,
                       CombineWeightMode mode) {
    if (probs.rank() != 2 || probs.rows() != decisions.size()) {
        throw std::invalid_argument("combine_weights: probs rows must match decisions");
    }
    std::size_t t = probs.rows(), e = probs.cols();
    std::vector<double> cw(t * e, 0.0);
    // selection table for the backward pass: (e1, e2) per token, e2 = -1 if top-1
    std::vector<std::pair<int, int>> sel(t);
    for (std::size_t i = 0; i < t; ++i) {
        const GatingDecision& d = decisions[i];
        int e1 = d.expert_ids[0];
        int e2 = d.is_top2 ? d.expert_ids[1] : -1;
        sel[i] = {e1, e2};
        double p1 = probs.values()[i * e + static_cast<std::size_t>(e1)];
        if (d.is_top2) {
            double p2 = probs.values()[i * e + static_cast<std::size_t>(e2)];
            if (mode == CombineWeightMode::kRenormalized) {
                cw[i * e + static_cast<std::size_t>(e1)] = p1 / (p1 + p2);
                cw[i * e + static_cast<std::size_t>(e2)] = p2 / (p1 + p2);
            } else {
                cw[i * e + static_cast<std::size_t>(e1)] = p1;
                cw[i * e + static_cast<std::size_t>(e2)] = p2;
            }
        } else {
            cw[i * e + static_cast<std::size_t>(e1)] =
                mode == CombineWeightMode::kRenormalized ? 1.0 : p1;
        }
    }
    return make_op(
        {t, e}, std::move(cw), {probs},
        [t, e, sel = std::move(sel), mode](TensorNode& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            for (std::size_t i = 0; i < t; ++i) {
                auto [e1i, e2i] = sel[i];
                std::size_t i1 = i * e + static_cast<std::size_t>(e1i);
                if (e2i < 0) {
                    // top-1: renormalized weight p1/p1 is constant, derivative 0
                    if (mode == CombineWeightMode::kRawGate) p.grad[i1] += n.grad[i1];
                    continue;
                }
                std::size_t i2 = i * e + static_cast<std::size_t>(e2i);
                if (mode == CombineWeightMode::kRawGate) {
                    p.grad[i1] += n.grad[i1];
                    p.grad[i2] += n.grad[i2];
                } else {
                    double p1 = p.values[i1], p2 = p.values[i2];
                    double s = p1 + p2, s2 = s * s;
                    // w1 = p1/s, w2 = p2/s
                    p.grad[i1] += (n.grad[i1] - n.grad[i2]) * p2 / s2;
                    p.grad[i2] += (n.grad[i2] - n.grad[i1]) * p1 / s2;
                }
            }
        },
        "combine_weights");
}

MoELayerOutput moe_forward(const std::vector<Expert>& experts,
                           const GatingNetwork& gate, const RoutingPolicy& policy,
                           const Tensor& x, const std::vector<RouteChoice>* forced) {
    std::size_t num_experts = experts.size();
    if (num_experts == 0 || (num_experts < 2 && policy.kind != GateKind::kTop1)) {
        throw std::invalid_argument(
            "moe_forward: need at least 2 experts (1 allowed for top-1 routing)");
    }
    std::size_t tokens = x.rows();
    std::size_t hidden = x.cols();
    if (forced && forced->size() != tokens) {
        throw std::invalid_argument("moe_forward: forced routing length mismatch");
    }

    MoELayerOutput out;
    Tensor probs = gate_probabilities(gate, x);

    out.decisions.reserve(tokens);
    long top2_count = 0;
    for (std::size_t ti = 0; ti < tokens; ++ti) {
        std::vector<double> row(probs.values().begin() + static_cast<long>(ti * num_experts),
                                probs.values().begin() + static_cast<long>((ti + 1) * num_experts));
        GatingDecision d;
        if (forced) {
            const RouteChoice& rc = (*forced)[ti];
            d.full_probs = row;
            d.expert_ids = rc.expert_ids;
            d.is_top2 = rc.is_top2;
            if (rc.is_top2) {
                double p1 = row[static_cast<std::size_t>(rc.expert_ids[0])];
                double p2 = row[static_cast<std::size_t>(rc.expert_ids[1])];
                d.weights = {p1 / (p1 + p2), p2 / (p1 + p2)};
            } else {
                d.weights = {1.0};
            }
        } else {
            d = select_experts(row, policy);
        }
        if (d.is_top2) ++top2_count;
        out.decisions.push_back(std::move(d));
    }

    Tensor cw = combine_weights(probs, out.decisions, policy.combine_weight_mode);

    // dispatch: group tokens per expert, run each expert once on its slice,
    // scale rows by the combine weights and scatter-add back
    Tensor combined({tokens, hidden}, 0.0);
    bool any = false;
    for (std::size_t ei = 0; ei < num_experts; ++ei) {
        std::vector<int> rows;
        std::vector<std::size_t> weight_idx;
        for (std::size_t ti = 0; ti < tokens; ++ti) {
            for (int id : out.decisions[ti].expert_ids) {
                if (static_cast<std::size_t>(id) == ei) {
                    rows.push_back(static_cast<int>(ti));
                    weight_idx.push_back(ti * num_experts + ei);
                }
            }
        }
        if (rows.empty()) continue;
        Tensor slice = gather_rows(x, rows);
        Tensor expert_out = expert_forward(experts[ei], slice);
        Tensor w = gather_elems(cw, weight_idx);
        Tensor scattered = scatter_rows(rowwise_scale(expert_out, w), rows, tokens);
        combined = any ? add(combined, scattered) : scattered;
        any = true;
    }
    out.outputs = combined;

    // statistics: f1 over top-1-routed tokens only, p over all tokens
    out.stats.expert_count = static_cast<int>(num_experts);
    out.stats.total_token_count = static_cast<long>(tokens);
    out.stats.top1_token_count = static_cast<long>(tokens) - top2_count;
    out.stats.f1.assign(num_experts, 0.0);
    if (out.stats.top1_token_count > 0) {
        std::vector<long> counts(num_experts, 0);
        for (const GatingDecision& d : out.decisions) {
            if (!d.is_top2) ++counts[static_cast<std::size_t>(d.expert_ids[0])];
        }
        for (std::size_t ei = 0; ei < num_experts; ++ei) {
            out.stats.f1[ei] = static_cast<double>(counts[ei]) /
                               static_cast<double>(out.stats.top1_token_count);
        }
    }
    Tensor ones_row({1, tokens}, 1.0 / static_cast<double>(tokens));
    out.stats.p = reshape(matmul(ones_row, probs), {num_experts});
    out.top2_ratio = static_cast<double>(top2_count) / static_cast<double>(tokens);
    return out;
}

}  // namespace adamoe
